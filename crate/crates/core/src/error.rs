//! Error type shared across the library.

use std::fmt;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

/// Failure modes surfaced by the library.
///
/// Contract violations (shape mismatches, non-finite values, frozen
/// parameters receiving gradient) are errors rather than panics so callers
/// can report them with context.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Two arrays (or an array and an expected geometry) disagree in shape.
    ShapeMismatch { context: &'static str, expected: Vec<usize>, got: Vec<usize> },
    /// A value that must be finite is NaN or infinite.
    NonFinite { context: String },
    /// An argument is outside its documented domain.
    InvalidArgument { context: String },
    /// An index is out of bounds for the container it addresses.
    IndexOutOfBounds { context: &'static str, index: usize, len: usize },
    /// A stateful operation was invoked in a state that forbids it.
    ContractViolation { context: String },
    /// A quantity could not be estimated from the given input.
    EstimationFailed { context: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { context, expected, got } => {
                write!(f, "shape mismatch in {context}: expected {expected:?}, got {got:?}")
            }
            CoreError::NonFinite { context } => {
                write!(f, "non-finite value in {context}")
            }
            CoreError::InvalidArgument { context } => {
                write!(f, "invalid argument: {context}")
            }
            CoreError::IndexOutOfBounds { context, index, len } => {
                write!(f, "index {index} out of bounds for {context} of length {len}")
            }
            CoreError::ContractViolation { context } => {
                write!(f, "contract violation: {context}")
            }
            CoreError::EstimationFailed { context } => {
                write!(f, "estimation failed: {context}")
            }
        }
    }
}

impl std::error::Error for CoreError {}
