//! Run a configured experiment programmatically and print its summary
//! (the library equivalent of `mel eps-sweep --config ...`).
//!
//! `cargo run --release --example run_experiment -- [out_dir]`

use mel::experiments::{run, write_outputs, Experiment, ExperimentConfig};

const CONFIG: &str = r#"
seeds = [0]
grid = [0.05, 0.2]

[protocol]
train_horizon = 5.0
test_horizon = 4.0
n_test = 2
dt = 0.01
variants = ["nominal", "hybrid-ct", "hybrid-dt"]
"#;

fn main() -> mel::Result<()> {
    let cfg = ExperimentConfig::from_toml(Experiment::EpsSweep, CONFIG, false, None)?;
    let record = run(&cfg)?;
    for cell in 0..cfg.grid.len() {
        for v in &cfg.protocol.variants {
            println!(
                "eps = {:<5} {:<10} median validity {:.3}",
                cfg.grid[cell],
                v.name(),
                record.median(Some(cell), v.name(), "validity_time")
            );
        }
    }
    if let Some(dir) = std::env::args().nth(1) {
        write_outputs(&record, &cfg, dir.as_ref())?;
        println!("wrote {dir}");
    }
    println!("{} jobs, {} failed, run id {}", record.cells.len(), record.n_failed(), record.run_id);
    Ok(())
}
