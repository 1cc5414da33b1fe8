use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = QmklError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QmklError {
    /// Invalid configuration value (qubit counts, grids, config fields).
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called with arguments that violate its contract.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error: {0}")]
    Parse(String),

    /// Inputs for which the requested quantity is undefined (zero-norm
    /// kernels, constant regressors, single-class targets).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An iterative solver hit its iteration cap. `best` carries the best
    /// iterate found so far.
    #[error("solver did not converge: {message}")]
    Solver { message: String, best: Vec<f64> },

    #[error("ingestion error at {path}:{row}: {message}")]
    Ingestion {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("stale artifact {path}: {message}")]
    StaleArtifact { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl QmklError {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        QmklError::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        QmklError::Config(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        QmklError::Degenerate(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QmklError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            QmklError::Config(_)
            | QmklError::Usage(_)
            | QmklError::Parse(_)
            | QmklError::Degenerate(_)
            | QmklError::StaleArtifact { .. } => 2,
            QmklError::Solver { .. } => 3,
            QmklError::Ingestion { .. } | QmklError::Io { .. } => 4,
        }
    }
}
