use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("stick-breaking values not strictly ascending in column {column}")]
    OrderingViolation { column: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance Cholesky factor has a non-positive diagonal entry")]
    NonPdCovariance,

    #[error("row {row} is not a valid probability simplex")]
    InvalidSimplex { row: usize },

    #[error("dataset is empty")]
    EmptyData,

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("inner optimization failed: {0}")]
    InnerOptFailure(String),

    #[error("every restart failed at its first iteration")]
    NoValidRestart,

    #[error("receiver {receiver} has no responsibility mass and a flat prior")]
    AllZeroRow { receiver: usize },

    #[error("receiver {receiver} has {count} observations, fewer than {folds} folds")]
    InsufficientDataPerFold {
        receiver: usize,
        count: usize,
        folds: usize,
    },

    #[error("density grid needs at least 2 cells per axis and a non-empty box")]
    DegenerateGrid,

    #[error("Pareto smoothing needs at least 5 weights, got {0}")]
    TooFewWeights(usize),

    #[error("parse error at row {row}, column {column}: {reason}")]
    Parse {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("unknown value {value:?} for {column} at row {row}")]
    UnknownEnumValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that originate in the numerics rather than in the
    /// input data or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonPdCovariance
                | Error::InnerOptFailure(_)
                | Error::NoValidRestart
                | Error::OrderingViolation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
