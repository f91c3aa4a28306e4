//! Excess risk and generalization gap of a linear dictionary fit as a
//! function of the training horizon T; the log-log slope should be near -1/2.
//!
//! `cargo run --release --example risk_scaling`

use mel::theory::{scaling_experiment, ScalingProblem};

fn main() -> mel::Result<()> {
    let problem = ScalingProblem::default();
    let rep = scaling_experiment(&problem)?;
    println!("{:>6}  {:>12}", "T", "median R+|G|");
    for (t, m) in &rep.medians {
        println!("{t:>6}  {m:>12.4e}");
    }
    println!("slope {:.3}", rep.slope);
    if let Some((lo, hi)) = rep.ci {
        println!("bootstrap 95% CI [{lo:.3}, {hi:.3}]");
    }
    Ok(())
}
