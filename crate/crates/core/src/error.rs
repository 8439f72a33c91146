use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the recovery toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Domain { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("singular value decomposition failed: {0}")]
    Svd(String),

    #[error("no observed entries")]
    EmptyObservations,

    #[error("no valid Markov parameters: {0}")]
    NoSolution(String),

    #[error("degenerate draw: {0}")]
    Degenerate(String),

    #[error("ground truth has zero energy")]
    ZeroEnergy,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
