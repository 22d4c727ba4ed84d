use thiserror::Error;

/// Errors raised by the discretization, solvers and probes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("penalized scheme unstable: n*dt = {n_dt} exceeds 1")]
    Unstable { n_dt: f64 },

    #[error("initial condition has negative entry {value} at node {node}")]
    NegativeInitialCondition { node: usize, value: f64 },

    #[error("solution blew up at step {step} (max |u| = {max_abs})")]
    BlowUp { step: usize, max_abs: f64 },

    #[error("rate function estimate did not converge (residual {residual})")]
    NotConverged { residual: f64 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed path dump: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
