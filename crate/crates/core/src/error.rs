use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on indices, dimensions or parameters was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// The input could not be read.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// The input was readable but did not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
