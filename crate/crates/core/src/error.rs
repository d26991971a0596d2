use thiserror::Error;

/// Errors raised by constructors, evaluations and solvers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("structural check failed: {what} defect {defect:.3e} exceeds {tol:.1e}")]
    Structure { what: String, defect: f64, tol: f64 },

    #[error("inner optimization did not converge: {what} (gap estimate {gap:.3e})")]
    NotConverged { what: String, gap: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
