//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by dataset handling, training, and the federation
/// protocols.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A wire message could not be decoded or fails validation.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A dataset file does not conform to the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// The dataset is well-formed but outside what the pipeline supports
    /// (missing values, variable lengths).
    #[error("unsupported dataset: {0}")]
    UnsupportedDataset(String),

    /// The requested method cannot handle this task (e.g. FROCKS on a
    /// multiclass problem).
    #[error("unsupported task: {0}")]
    UnsupportedTask(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for CLI surfaces: 2 for configuration and usage
    /// problems, 3 for dataset problems, 1 for runtime faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::UnsupportedTask(_) => 2,
            Error::Format(_) | Error::UnsupportedDataset(_) | Error::Io(_) => 3,
            Error::Protocol(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
