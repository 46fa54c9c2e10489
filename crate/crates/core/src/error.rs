use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, out-of-range parameters or malformed inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// The chain induced by some policy is reducible or periodic.
    #[error("ergodicity error: {0}")]
    Ergodicity(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A stochastic recursion left its admissible region.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    /// Caller violated a precondition of a pure routine.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
