use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gccakit_cli::commands::output_dir;
use gccakit_cli::{run, CliError, Command, ExperimentConfig};

/// Stimulus-informed and stimulus-unaware group component analysis.
#[derive(Debug, Parser)]
#[command(name = "gccakit", version)]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte-Carlo runs; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Select hyperparameters and fit every configured method.
    Fit,
    /// Score fitted models on the held-out trials.
    Evaluate,
    /// Monte-Carlo sweep over training size, group size or channel count.
    Sweep,
    /// Write a synthetic recording.
    Synth,
    /// Permutation null distributions and significance thresholds.
    Threshold,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GCCAKIT_LOG", "info"))
        .format_timestamp_millis()
        .init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Other(e.to_string()))?;
    let out = output_dir(cli.out, &cfg);
    let cmd = match cli.command {
        Sub::Fit => Command::Fit,
        Sub::Evaluate => Command::Evaluate,
        Sub::Sweep => Command::Sweep,
        Sub::Synth => Command::Synth,
        Sub::Threshold => Command::Threshold,
    };
    run(cmd, &cfg, &out)
}
