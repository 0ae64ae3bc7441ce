//! Crate-wide error type.
//!
//! Every variant maps onto one of the CLI exit-code classes through
//! [`Error::exit_code`].

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("{path}: row {row}: {message}")]
    Load {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("identity {identity} appears in both the labeled and unlabeled sets (row {row})")]
    DisjointIdentity { identity: u32, row: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("labeled guidance unavailable: {0}")]
    GuidanceUnavailable(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("messages became non-finite at sweep {sweep}")]
    NumericalFailure { sweep: usize },

    #[error("preference search failed after {probes} probes without a usable clustering")]
    SearchFailure { probes: usize },

    #[error("clustering produced no exemplars")]
    EmptyClustering,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(message: impl Into<String>) -> Self {
        Error::Input(message.into())
    }

    /// Process exit code: 1 input, 2 numerical failure, 3 guidance unavailable.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalFailure { .. } | Error::SearchFailure { .. } => 2,
            Error::GuidanceUnavailable(_) => 3,
            _ => 1,
        }
    }
}
