use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("singular problem: {0}")]
    Singular(String),

    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u16),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
