//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by parsing, compilation, and measurement.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed sentence or target text; positions are 1-based.
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    /// Operand dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The requested matrix is not certified as a flow map by the
    /// supported special forms.
    #[error("not a flow map: {0}")]
    NotAFlow(String),

    /// Singular or numerically unusable matrix.
    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    /// Euler split step violates the slope-positivity condition.
    #[error("infeasible step: {0}")]
    InfeasibleStep(String),

    /// An iteration or size cap was exceeded.
    #[error("resource limit exceeded: {0}")]
    ResourceExhausted(String),

    /// A compiled artifact failed its own validation gate.
    #[error("validation failed: measured error {measured} exceeds requested {requested}")]
    ValidationFailed { measured: f64, requested: f64 },

    /// Invalid argument or configuration value.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parse(line: usize, col: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, col, msg: msg.into() }
    }
}
