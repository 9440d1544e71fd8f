use std::io;

use thiserror::Error;

/// Errors produced across the library.
///
/// Variants are grouped by the CLI exit-code class they map onto:
/// parameter/validation errors, numeric/runtime errors, and I/O errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("geometry mismatch: expected resolution {expected}, got {actual}")]
    Geometry { expected: usize, actual: usize },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("patch origin {origin}: {source}")]
    Origin {
        origin: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("bad file format: expected magic {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    Version { found: u16, supported: u16 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checksum mismatch in section {section:?}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        section: String,
        stored: u32,
        computed: u32,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by front ends to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Runtime,
    Io,
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }

    pub fn at_origin(self, origin: usize) -> Self {
        Error::Origin {
            origin,
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter(_) | Error::Geometry { .. } => ErrorClass::Validation,
            Error::Sample { source, .. }
            | Error::Origin { source, .. }
            | Error::Stage { source, .. } => source.class(),
            Error::SolverDiverged { .. } | Error::Numeric(_) | Error::TrainingDiverged { .. } => {
                ErrorClass::Runtime
            }
            Error::BadMagic { .. }
            | Error::Version { .. }
            | Error::Truncated(_)
            | Error::Checksum { .. }
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
