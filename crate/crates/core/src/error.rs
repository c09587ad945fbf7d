//! Shared error type for the simulation library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Numerical breakdown (non-positive pivot, vanishing denominator, ...).
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Dimensions of two operands do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed matrix container: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
