use thiserror::Error;

/// Errors raised by the numerical kernels, estimators and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is singular to working precision")]
    Singular,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("eigenvalue iteration did not converge after {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("exhaustive search supports at most {max} measurements, got {m}")]
    TooManyMeasurements { m: usize, max: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(what()))
    }
}
