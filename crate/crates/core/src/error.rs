use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: bad dimensions, non-stochastic rows, out-of-range parameters.
    #[error("invalid input: {0}")]
    Validation(String),

    /// An iterative solver hit its sweep cap before reaching tolerance.
    #[error("no convergence after {sweeps} sweeps (last change {last_change:e})")]
    Convergence {
        sweeps: usize,
        last_change: f64,
        history: Vec<f64>,
    },

    /// A (state, action) pair that the dataset never visits was queried.
    #[error("state-action pair ({state}, {action}) is outside the dataset support")]
    OutOfSupport { state: usize, action: usize },

    #[error("problem too large: {0}")]
    Size(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("construction failed: {0}")]
    Construction(String),

    /// Training produced a non-finite or exploding loss.
    #[error("training diverged at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
