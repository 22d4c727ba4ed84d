use std::path::PathBuf;

use thiserror::Error;

use crate::config::EXPERIMENTS;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {reason}")]
    Io { path: PathBuf, reason: String },

    #[error("config schema violation: {0}")]
    Schema(String),

    #[error("config value `{path}` out of range: {reason}")]
    Invalid { path: String, reason: String },

    #[error("config value `{path}` is unstable: n*dt = {n_dt} exceeds 1")]
    Unstable { path: String, n_dt: f64 },

    #[error("unknown experiment `{0}`; available: {list}", list = EXPERIMENTS.join(", "))]
    UnknownExperiment(String),

    #[error(transparent)]
    Core(#[from] reflected_spde::Error),

    #[error("experiment checks failed: {0}")]
    ChecksFailed(String),
}

impl CliError {
    /// Short machine-readable tag for failure records.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Schema(_) => "schema",
            CliError::Invalid { .. } => "range",
            CliError::Unstable { .. } => "stability",
            CliError::UnknownExperiment(_) => "unknown-experiment",
            CliError::Core(reflected_spde::Error::BlowUp { .. }) => "blow-up",
            CliError::Core(reflected_spde::Error::NotConverged { .. }) => "not-converged",
            CliError::Core(_) => "numerics",
            CliError::ChecksFailed(_) => "checks-failed",
        }
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_)
            | CliError::Invalid { .. }
            | CliError::Unstable { .. }
            | CliError::UnknownExperiment(_) => 2,
            _ => 1,
        }
    }
}
