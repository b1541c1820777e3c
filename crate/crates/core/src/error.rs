use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or input shape that violates a type invariant.
    #[error("invalid input: {0}")]
    Spec(String),

    #[error("computation error: {0}")]
    Computation(String),

    #[error("homography estimation failed: {0}")]
    Estimation(String),

    #[error("projection failed: {0}")]
    Projection(String),

    #[error("skeleton feature error: {0}")]
    Feature(String),

    #[error("clustering error: {0}")]
    Clustering(String),

    #[error("IMU stream error: {0}")]
    Stream(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("classification error: {0}")]
    Classification(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: String,
        message: String,
    },

    #[error("dataset failed validation with {} violation(s)", .0.len())]
    Validation(Vec<Violation>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
