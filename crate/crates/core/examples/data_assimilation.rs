//! Synchronize a Lorenz '63 model to noisy observations of u_x with a
//! constant-gain 3DVAR filter and compare with the unfiltered run.
//!
//! `cargo run --release --example data_assimilation`

use mel::assimilate::{add_observation_noise, run_3dvar, Gain, ObservationOperator};
use mel::dynamics::Lorenz63;
use mel::integrate::{integrate_uniform, IntegratorConfig};

fn main() -> mel::Result<()> {
    let f = Lorenz63::default();
    let truth = integrate_uniform(&f, &[-5.9, -5.5, 24.5], 10.0, 0.01, &IntegratorConfig::truth())?;
    let h = ObservationOperator::selection(3, &[0])?;
    let obs = add_observation_noise(&truth, &h, 1.0, 0)?;
    let u0 = [5.0, 5.0, 20.0];
    let cfg = IntegratorConfig::model();
    let filtered = run_3dvar(&f, &obs, &h, &Gain::column(&[0.5, 0.0, 0.0])?, &u0, &cfg)?;
    let free = run_3dvar(&f, &obs, &h, &Gain::zeros(3, 1), &u0, &cfg)?;
    for t_mark in [0.5, 1.0, 2.0, 3.0, 5.0, 10.0] {
        let i = truth.times().partition_point(|&t| t < t_mark - 1e-9);
        let err = |u: &[f64]| u.iter().zip(truth.state(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        println!(
            "t = {t_mark:>4}: |error| filtered {:8.4}, free run {:8.4}",
            err(filtered.state(i)),
            err(free.state(i))
        );
    }
    Ok(())
}
