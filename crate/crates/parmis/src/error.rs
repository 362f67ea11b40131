use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violated a precondition.
    #[error("invalid input: {0}")]
    Input(String),
    /// A numerical routine could not complete (e.g. a kernel matrix that
    /// stays indefinite after the full jitter escalation ladder).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// An optimization run aborted (e.g. too many consecutive evaluation
    /// failures).
    #[error("run aborted: {0}")]
    Aborted(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
