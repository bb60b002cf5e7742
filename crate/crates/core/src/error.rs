use thiserror::Error;

/// Errors produced by the estimators and their supporting routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A variance or scale estimate collapsed to zero.
    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("model format error at line {line}: {message}")]
    Format { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
