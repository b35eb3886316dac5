use caflow::Error;
use thiserror::Error as ThisError;

/// A failed command together with its process exit code.
#[derive(Debug, ThisError)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    /// Wraps a library error, classifying it by kind.
    pub fn from_core(context: &str, e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => EXIT_CONFIG,
            Error::Dataset(_) | Error::Format(_) => EXIT_DATA,
            Error::NonFinite { .. } | Error::TrainingDiverged { .. } => EXIT_NUMERIC,
            _ => EXIT_OTHER,
        };
        Self::new(code, format!("{context}: {e}"))
    }

    pub fn with_code(code: u8, context: &str, e: Error) -> Self {
        Self::new(code, format!("{context}: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub trait Context<T> {
    /// Classifies by error kind.
    fn ctx(self, context: &str) -> CliResult<T>;
    /// Forces an exit code.
    fn code(self, code: u8, context: &str) -> CliResult<T>;
}

impl<T> Context<T> for caflow::Result<T> {
    fn ctx(self, context: &str) -> CliResult<T> {
        self.map_err(|e| CliError::from_core(context, e))
    }

    fn code(self, code: u8, context: &str) -> CliResult<T> {
        self.map_err(|e| CliError::with_code(code, context, e))
    }
}
