//! Config-driven experiment runner for `reflected-spde`.
//!
//! - [`config`]: TOML schema, presets and validation
//! - [`experiments`]: one driver per experiment name
//! - [`artifacts`]: CSV tables, metadata and manifest output

pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiments;

use std::path::{Path, PathBuf};
use std::time::Instant;

use reflected_spde::parallel::with_workers;

pub use artifacts::{Check, Outcome, Table};
pub use config::{load_config, ExperimentConfig, EXPERIMENTS};
pub use error::CliError;

/// Runs the configured experiment on `cfg.workers` threads.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    with_workers(cfg.workers, || experiments::run(cfg))
}

/// Files written by [`run_to_dir`] and the experiment outcome.
#[derive(Debug)]
pub struct RunOutput {
    pub outcome: Outcome,
    pub files: Vec<PathBuf>,
    pub wall_time_s: f64,
}

/// Runs the experiment and writes its artifacts into `dir`. On error a
/// `failure.json` record is written instead and the error is returned.
pub fn run_to_dir(
    cfg: &ExperimentConfig,
    dir: &Path,
    config_source: Option<&[u8]>,
) -> Result<RunOutput, CliError> {
    let config_toml = cfg.to_toml();
    let start = Instant::now();
    let result = run_experiment(cfg);
    let info = artifacts::RunInfo {
        experiment: &cfg.experiment,
        seed: cfg.seed,
        workers: cfg.workers,
        config_toml: &config_toml,
        config_source,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    match result {
        Ok(outcome) => {
            let files = artifacts::write_outcome(dir, &info, &outcome)?;
            Ok(RunOutput {
                outcome,
                files,
                wall_time_s: info.wall_time_s,
            })
        }
        Err(err) => {
            artifacts::write_failure(dir, &info, &err)?;
            Err(err)
        }
    }
}
