use thiserror::Error;

/// Errors raised by the reservoir, generator, training and metric routines.
#[derive(Debug, Error)]
pub enum RsigError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, RsigError>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(RsigError::Argument(msg.into()))
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(RsigError::Shape(msg.into()))
}
