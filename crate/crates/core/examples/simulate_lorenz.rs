//! Simulate Lorenz '63 and the multiscale Lorenz '96 system and write the
//! sampled trajectories as CSV.
//!
//! `cargo run --release --example simulate_lorenz -- [out_dir]`

use mel::dynamics::{L96Params, Lorenz63, Lorenz96Multiscale};
use mel::integrate::{integrate_uniform, IntegratorConfig};
use std::path::PathBuf;

fn main() -> mel::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-output".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = IntegratorConfig::dopri(1e-9, 1e-9, 0.01);

    let l63 = integrate_uniform(&Lorenz63::default(), &[1.0, 3.0, 1.0], 50.0, 0.01, &cfg)?;
    l63.write_csv(out.join("l63.csv"))?;
    println!("L63: {} samples, mean |u| = {:.2}, final state {:?}", l63.len(), l63.mean_norm(), l63.last_state());

    let params = L96Params::default();
    let l96 = Lorenz96Multiscale::new(params)?;
    let mut x0 = vec![0.0; params.state_dim()];
    for (k, v) in x0.iter_mut().enumerate() {
        *v = if k < params.k { (k as f64).sin() } else { 0.01 * (k as f64).cos() };
    }
    let slow: Vec<usize> = (0..params.k).collect();
    let traj = integrate_uniform(&l96, &x0, 10.0, 0.005, &cfg)?.project(&slow)?;
    traj.write_csv(out.join("l96_slow.csv"))?;
    println!("L96 (K={}, J={}, eps={}): slow mean |X| = {:.2}", params.k, params.j, params.eps, traj.mean_norm());
    println!("wrote {}", out.display());
    Ok(())
}
