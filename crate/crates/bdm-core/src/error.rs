//! Error type shared by all estimation routines.

/// Errors raised by filtering, smoothing and bound computations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A covariance could not be factorized even after diagonal jitter.
    #[error("degenerate covariance: Cholesky factorization failed after {attempts} jitter attempts")]
    DegenerateCovariance { attempts: usize },

    /// A matrix that must be invertible for the update was singular.
    #[error("singular matrix in {context}")]
    SingularMatrix { context: &'static str },

    /// An argument had the wrong dimension.
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A scalar argument was outside its admissible range.
    #[error("invalid argument {what}: {details}")]
    InvalidArgument {
        what: &'static str,
        details: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
