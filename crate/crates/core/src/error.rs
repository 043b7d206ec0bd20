//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two vectors or a vector and a dataset disagree on dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An operation that needs at least one center received none.
    #[error("no centers")]
    NoCenters,

    /// Every candidate center set gives a zero denominator.
    #[error("degenerate instance: {0}")]
    Degenerate(String),

    /// An exhaustive routine would exceed its enumeration guard.
    #[error("instance too large: {what} needs {needed} evaluations, guard is {guard}")]
    TooLarge { what: &'static str, needed: f64, guard: f64 },

    /// A weight was zero, negative or not finite.
    #[error("invalid weight {0}")]
    InvalidWeight(f64),

    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Input data violates its bounds (coordinates outside the grid, entries above M).
    #[error("input error: {0}")]
    Input(String),

    /// A serialized artifact could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
