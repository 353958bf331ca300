use std::io;

use thiserror::Error;

/// Errors produced by the solvers, I/O readers and experiment harness.
#[derive(Debug, Error)]
pub enum SparseError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("atom index {index} out of range for {m} atoms")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("solver diverged: {0}")]
    Diverged(String),
    #[error("{what} refused: {detail}")]
    CapExceeded { what: &'static str, detail: String },
    #[error("unknown solver `{0}`")]
    UnknownSolver(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SparseError>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(SparseError::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn invalid(msg: impl Into<String>) -> SparseError {
    SparseError::InvalidArgument(msg.into())
}
