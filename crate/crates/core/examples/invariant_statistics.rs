//! Compare long-run statistics of Lorenz '63 with a perturbed-parameter
//! model: KDE-based KL divergence and autocorrelation error per component.
//!
//! `cargo run --release --example invariant_statistics`

use mel::dynamics::{L63Params, Lorenz63};
use mel::integrate::{integrate_uniform, IntegratorConfig};
use mel::metrics::{acf, marginal_acf_error, marginal_kl};

fn main() -> mel::Result<()> {
    let cfg = IntegratorConfig::dopri(1e-8, 1e-8, 0.01);
    let x0 = [1.0, 3.0, 1.0];
    let reference = integrate_uniform(&Lorenz63::default(), &x0, 500.0, 0.01, &cfg)?;
    for b in [28.0, 28.5, 32.0] {
        let model = Lorenz63::new(L63Params { b, ..L63Params::default() });
        let run = integrate_uniform(&model, &[1.1, 3.0, 1.0], 500.0, 0.01, &cfg)?;
        println!(
            "b = {b:>4}: KL {:.4}, ACF error {:.4}",
            marginal_kl(&reference, &run)?,
            marginal_acf_error(&reference, &run, 200)?
        );
    }
    let a = acf(&reference.column(0), 100)?;
    println!("u_x ACF at lags 0, 25, 50, 100: {:?}", [0, 25, 50, 100].map(|k| (a.values[k] * 1e3).round() / 1e3));
    Ok(())
}
