//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition (dimension mismatch,
    /// non-finite value, unknown id, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Logarithm requested at or too close to the rotation-angle cut locus.
    #[error("rotation angle too close to pi for a well-defined logarithm")]
    SingularRotation,

    /// The measurement geometry does not constrain the state (rank-deficient
    /// normal equations, coincident tags, zero range).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A solver or enumeration produced no candidate solutions.
    #[error("no solution: {0}")]
    NoSolution(String),

    /// A numerical operation failed (non-invertible innovation covariance,
    /// failed factorization).
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// I/O error while reading or writing data files.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A configuration or data file failed to parse or validate.
    /// `line` is 1-based when known, 0 when the error is not line-specific.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
