//! CLI-level errors carrying the process exit code.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 data/format error,
//! 4 numerical failure.

use melpatch_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad config file, violated preconditions. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed, or mismatched input data. Exit code 3.
    #[error("{0}")]
    Data(String),
    /// Numerical failure inside the pipeline. Exit code 4.
    #[error("{0}")]
    Internal(String),
}

pub type Result<T> = core::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite(_) | CoreError::Numeric(_) => {
                CliError::Internal(e.to_string())
            }
            CoreError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
