use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DsmError {
    /// A caller-side contract violation (bad parameter, missing input).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A linear solve inside a vector field failed at time `t` and state `state`.
    #[error("singular linear system at t = {t}: {reason}")]
    Singular {
        t: f64,
        state: Vec<f64>,
        reason: String,
    },

    /// A dense factorization failed or produced non-finite output.
    #[error("linear solver failure: {0}")]
    SolverFailure(String),

    /// The right-hand side is not in the numerical range of the operator.
    #[error("right-hand side outside the numerical range (residual {residual:e})")]
    Inconsistent { residual: f64 },

    /// Adaptive step control could not keep the step above the underflow limit.
    #[error("step size underflow at t = {t} (h = {h:e})")]
    Stiffness { t: f64, h: f64 },

    #[error("certificate inapplicable: {0}")]
    Inapplicable(String),

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = DsmError> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(DsmError::DimensionMismatch { expected, found })
    }
}
