use thiserror::Error;

/// Command failure, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, missing config/checkpoint/input files. Exit code 2.
    #[error("usage: {0}")]
    Usage(String),
    /// The command ran but a contract or check failed. Exit code 1.
    #[error("{0}")]
    Contract(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Contract(_) => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn contract(e: impl std::fmt::Display) -> CliError {
    CliError::Contract(e.to_string())
}

pub(crate) fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}
