use std::fmt;

use odetext_core::Error as CoreError;

/// Failure of a command, classified by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or arguments (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Unreadable or malformed input files (exit 2).
    #[error("{0}")]
    Input(String),
    /// Divergence, step limits and other numeric failures (exit 3).
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn input(msg: impl fmt::Display) -> Self {
        CliError::Input(msg.to_string())
    }

    /// Numeric failures keep exit 3; anything else becomes `otherwise`.
    pub fn from_core(err: CoreError, otherwise: fn(String) -> CliError) -> Self {
        match err.root() {
            CoreError::Divergence { .. } | CoreError::StepLimit { .. } | CoreError::TrainingFailure { .. } => {
                CliError::Numeric(err.to_string())
            }
            _ => otherwise(err.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
