use clap::Parser;
use mel::experiments::{run, write_outputs, Experiment, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Run one experiment from a TOML configuration.
#[derive(Parser, Debug)]
#[command(name = "mel", version)]
struct Cli {
    /// eps-sweep | data-sweep | dim-sweep | dt-sweep | l96-sweep |
    /// manifold-demo | theory-scaling | rc-partial
    experiment: String,
    /// TOML file overriding the experiment's preset.
    #[arg(long)]
    config: PathBuf,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `output` from the config, else `runs/<run_id>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from the full-scale preset instead of the desk-scale one.
    #[arg(long)]
    full_scale: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match cli
        .experiment
        .parse::<Experiment>()
        .and_then(|e| ExperimentConfig::from_file(e, &cli.config, cli.full_scale, cli.seed))
    {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("mel: {e}");
            return ExitCode::from(1);
        }
    };
    let record = match run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("mel: {e}");
            return ExitCode::from(1);
        }
    };
    let out = cli
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&record.run_id));
    if let Err(e) = write_outputs(&record, &cfg, &out) {
        eprintln!("mel: cannot write outputs: {e}");
        return ExitCode::from(2);
    }
    let failed = record.n_failed();
    eprintln!(
        "mel: {} jobs, {} failed, {:.1}s -> {}",
        record.cells.len(),
        failed,
        record.wall_time_s,
        out.display()
    );
    for c in record.cells.iter().filter(|c| c.failed()) {
        eprintln!("  cell {} seed {}: {}", c.cell, c.seed, c.error.as_deref().unwrap_or(""));
    }
    if failed > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}
