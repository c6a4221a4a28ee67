//! Experiment orchestration for the `ulab` command-line tool: training BN and
//! unitization MLPs, moment tracking, critic-based EM tracking and the bound and
//! oracle property batteries, all emitting CSV.

pub mod checks;
pub mod config;
pub mod emdist;
pub mod report;
pub mod train;

use anyhow::Result;

pub use config::{ConfigError, ExperimentConfig, Mode};

/// How a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Some bound or oracle property was violated.
    Violation,
    /// Training loss became non-finite.
    Diverged,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Violation => 2,
            Status::Diverged => 3,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Violation => "violation",
            Status::Diverged => "diverged",
        }
    }
}

fn is_divergence(e: &anyhow::Error) -> bool {
    e.chain().any(|c| matches!(c.downcast_ref::<ulab::Error>(), Some(ulab::Error::Diverged(_))))
}

/// Runs the configured mode and writes `manifest.txt` next to its outputs.
pub fn run(cfg: &ExperimentConfig) -> Result<Status> {
    let result: Result<(Status, Vec<_>)> = match cfg.mode {
        Mode::Train => train::run_train(cfg).map(|runs| (Status::Ok, runs.into_iter().flat_map(|r| r.outputs).collect())),
        Mode::Moments => {
            train::run_moments(cfg).map(|runs| (Status::Ok, runs.into_iter().flat_map(|r| r.train.outputs).collect()))
        }
        Mode::Emdist => emdist::run_emdist(cfg).map(|o| (Status::Ok, o)),
        Mode::Bounds => checks::run_bounds(cfg).map(|(c, o)| (if c.all_pass() { Status::Ok } else { Status::Violation }, o)),
        Mode::OracleCheck => {
            checks::run_oracle_check(cfg).map(|(c, o)| (if c.all_pass() { Status::Ok } else { Status::Violation }, o))
        }
    };
    match result {
        Ok((status, outputs)) => {
            report::write_manifest(cfg, &outputs, status.label())?;
            Ok(status)
        }
        Err(e) if is_divergence(&e) => {
            log::error!("{e:#}");
            report::write_manifest(cfg, &[], Status::Diverged.label())?;
            Ok(Status::Diverged)
        }
        Err(e) => Err(e),
    }
}
