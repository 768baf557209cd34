use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes, dimensions or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data violates a precondition (labels out of range, lengths differ).
    #[error("input error: {0}")]
    Input(String),

    /// API misuse, e.g. backward on a non-scalar or on an already consumed tape.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("numeric degeneracy: {0}")]
    Numeric(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("corrupt file {path}: expected {expected} bytes, found {actual}")]
    Corruption {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("similarity counter mismatch for {method} V={views} N={batch}: measured {measured}, formula {formula}")]
    CounterMismatch {
        method: String,
        views: usize,
        batch: usize,
        measured: u64,
        formula: u64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input or configuration rather than
    /// by the environment (I/O, corrupted files).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Input(_)
                | Error::Usage(_)
                | Error::Validation(_)
                | Error::Stratification(_)
                | Error::Version { .. }
                | Error::Parse { .. }
        )
    }
}
