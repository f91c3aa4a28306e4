//! Partially observed Lorenz '63: observe only u_x, use f0 = -a·u_x, and
//! learn the missing dynamics through a reservoir's linear readout.
//!
//! `cargo run --release --example reservoir_partial`

use mel::dynamics::L63Params;
use mel::experiments::{rc_partial, RcConfig};
use mel::metrics::DEFAULT_GAMMA;

fn main() -> mel::Result<()> {
    let rc = RcConfig {
        n_test: 5,
        ..RcConfig::default()
    };
    let rep = rc_partial(&L63Params::default(), &rc, DEFAULT_GAMMA, 0)?;
    println!(
        "readout RMS {:.3} vs C=0 baseline {:.3} (ratio {:.4})",
        rep.rms_fit,
        rep.rms_baseline,
        rep.rms_ratio()
    );
    for (k, (r, n)) in rep.validity_reservoir.iter().zip(&rep.validity_nominal).enumerate() {
        println!("segment {k}: validity reservoir {r:.2}, f0 only {n:.2}");
    }
    println!("reservoir wins on {:.0}% of segments", 100.0 * rep.win_rate());
    Ok(())
}
