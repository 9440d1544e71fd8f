use std::io;
use std::path::PathBuf;

use ppca_core::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config file {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Core(#[from] ppca_core::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for usage and validation, 2 for runtime and numeric failures,
    /// 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 1,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Runtime => 2,
                ErrorClass::Io => 3,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
