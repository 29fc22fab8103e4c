use std::process::ExitCode;

use thiserror::Error;

/// Failure classes of the exit-code contract.
#[derive(Debug, Error)]
pub enum CliError {
    /// A check ran and did not hold.
    #[error("{0}")]
    Property(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Property(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Io(_) => 3,
        })
    }
}

/// Parameter errors from the library trace back to the config; the rest are
/// numerical.
impl From<dephasim::Error> for CliError {
    fn from(e: dephasim::Error) -> Self {
        match e {
            dephasim::Error::Parameter(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
