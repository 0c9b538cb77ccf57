use thiserror::Error;

/// Errors raised by the numerics, estimators and diagnostics.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum VmfError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// The fixed-point iteration hit `max_iter` without meeting the tolerance.
    /// The last iterate is kept so callers can still inspect it.
    #[error("no convergence after {iterations} iterations (last step {last_step:e})")]
    NonConvergence {
        iterations: usize,
        last_step: f64,
        last_iterate: Vec<f64>,
    },

    /// The iteration left the domain of the inverse mean-resultant map.
    #[error("iteration diverged at step {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("quadrature did not converge: estimated error {estimated_error:e} after {intervals} subintervals")]
    Quadrature { estimated_error: f64, intervals: usize },

    #[error("matrix is numerically singular (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl VmfError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        VmfError::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, VmfError>;
