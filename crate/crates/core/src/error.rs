use thiserror::Error;

/// Errors raised by tensor-train arithmetic, sketching and the solvers.
#[derive(Debug, Error)]
pub enum TtError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("size limit exceeded: {entries} entries requested, cap is {cap}")]
    Size { entries: u128, cap: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate recovery: {0}")]
    DegenerateRecovery(String),

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TtError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TtError::Shape(msg.into()))
}
