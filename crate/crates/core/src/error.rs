use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("step limit exceeded: dtau = {dtau} is above the limit {limit} for these bounds")]
    Cfl { dtau: f64, limit: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("sub-zero set touches the {axis} boundary of the grid; domain too small")]
    DomainTooSmall { axis: &'static str },

    #[error("query outside the family lattice: {0}")]
    OutOfRange(String),

    #[error("malformed JSON at {pointer}: {message}")]
    ScenarioFormat { pointer: String, message: String },

    #[error("malformed value file: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("step {step}, stage {stage}: {source}")]
    Stage {
        step: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("while solving lattice key {key}: {source}")]
    Key {
        key: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used to map errors to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, step: usize, stage: &'static str) -> Self {
        Error::Stage {
            step,
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Numerical(_) | Error::DomainTooSmall { .. } => ErrorKind::Numerical,
            Error::Io { .. } => ErrorKind::Io,
            Error::Stage { source, .. } | Error::Key { source, .. } => source.kind(),
            _ => ErrorKind::Validation,
        }
    }
}
