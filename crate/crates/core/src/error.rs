use thiserror::Error;

/// Errors raised by oracles, estimators and solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("component index {index} out of range for {kind} with {count} summands")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        count: usize,
    },

    #[error("empty mini-batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("strong convexity constant is zero; use the non-strongly convex reduction instead")]
    NotStronglyConvex,

    #[error("non-finite iterate at outer loop {snapshot}, inner iteration {inner}")]
    NonFiniteIterate { snapshot: usize, inner: usize },

    #[error(
        "iteration cap {iterations} reached with residual {residual:e} above tolerance {tol:e}"
    )]
    NotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("eigen decomposition failed: {0}")]
    Eigen(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize, context: &'static str) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            actual,
            context,
        })
    }
}
