use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ulab_harness::{run, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "ulab", version, about = "Unitization and EM-distance experiments", after_long_help = defaults_help())]
struct Cli {
    #[command(subcommand)]
    mode: Command,
    /// `key = value` configuration file (see the list of keys below)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Only print warnings and errors
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train each normalization variant from a shared initialization
    Train,
    /// Train and record per-epoch moments of one block's units
    Moments,
    /// Critic-based EM distances between consecutive checkpoints (or a shift grid)
    Emdist,
    /// Seeded battery of the transport bounds
    Bounds,
    /// Self-consistency of the exact EM oracles
    OracleCheck,
}

impl From<Command> for Mode {
    fn from(c: Command) -> Mode {
        match c {
            Command::Train => Mode::Train,
            Command::Moments => Mode::Moments,
            Command::Emdist => Mode::Emdist,
            Command::Bounds => Mode::Bounds,
            Command::OracleCheck => Mode::OracleCheck,
        }
    }
}

fn defaults_help() -> String {
    format!("Configuration keys and their defaults:\n\n{}", ExperimentConfig::default().serialize())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .parse_default_env()
        .init();
    let mode = Mode::from(cli.mode);
    let parsed = match &cli.config {
        Some(path) => ExperimentConfig::load(path, mode),
        None => ExperimentConfig::parse("", mode),
    };
    let mut cfg = match parsed {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(64);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.out_dir {
        cfg.out_dir = dir;
    }
    match run(&cfg) {
        Ok(status) => ExitCode::from(status.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
