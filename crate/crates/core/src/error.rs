use thiserror::Error;

/// Errors raised by the model, the factor steppers and the simulation engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SliError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Model parameters failed validation; each entry names one violated assumption.
    #[error("invalid model parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),

    /// An operation was asked of a model family that does not support it.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// An internal invariant of an engine was broken.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A numerical tolerance was exceeded.
    #[error("numerical failure at t = {time}: {reason}")]
    Numerical { time: f64, reason: String },
}

pub type Result<T, E = SliError> = std::result::Result<T, E>;
