use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemError {
    #[error("invalid polynomial order {0} (supported: 1..={max})", max = crate::basis::MAX_ORDER)]
    InvalidOrder(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("point {0} lies outside the reference interval [-1, 1]")]
    Domain(f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("mesh construction failed: {0}")]
    Construction(String),

    #[error("element {element} is inverted (jacobian {jacobian:e} at local node {node})")]
    InvertedElement {
        element: usize,
        node: usize,
        jacobian: f64,
    },

    #[error(
        "{solver} did not converge after {iterations} iterations (relative residual {residual:e})"
    )]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("CFL number {cfl:.4} exceeds the configured limit {limit}")]
    CflViolation { cfl: f64, limit: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NonSymmetric(f64),

    #[error("{0} is undefined for a series with zero variance")]
    ZeroVariance(&'static str),

    #[error("snapshot mismatch: {0}")]
    SnapshotMismatch(String),
}

pub type Result<T> = std::result::Result<T, SemError>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SemError::Dimension { expected, got })
    }
}
