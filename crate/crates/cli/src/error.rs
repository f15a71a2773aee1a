use std::fmt;
use std::path::Path;

use sem_core::SemError;

/// Failure categories, each with its own process exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Numerical(SemError),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SemError> for CliError {
    fn from(e: SemError) -> Self {
        match e {
            // bad user input surfacing from the library
            SemError::Parameter(m) => CliError::Config(m),
            SemError::InvalidOrder(_) | SemError::Construction(_) => {
                CliError::Config(e.to_string())
            }
            SemError::SnapshotMismatch(m) => CliError::Io(m),
            other => CliError::Numerical(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
