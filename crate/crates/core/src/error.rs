use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("damping floor reached (delta = {delta:e}) after {epochs} epochs; subproblem value {value}")]
    Divergence { delta: f64, epochs: usize, value: f64 },

    #[error("reference solver did not converge in {iterations} sweeps (gap {gap:e}, best objective {best})")]
    MaxIterations { iterations: usize, gap: f64, best: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver worker failed: {0}")]
    Worker(String),

    #[error("communication error: {0}")]
    Comm(String),

    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
