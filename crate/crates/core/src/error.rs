use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("metric is not uniformly elliptic: {0}")]
    NotElliptic(String),
    #[error("{kind} norm does not converge: {detail}")]
    NormDivergent { kind: &'static str, detail: String },
    #[error("quadrature did not reach tolerance: {0}")]
    QuadratureNotConverged(String),
    #[error("transport solution does not satisfy the gauge conditions: {0}")]
    GaugeConditionsFailed(String),
    #[error("inverse map did not converge at |y| = {0}")]
    InverseNotConverged(f64),
    #[error("operator is not formally symmetric: {0}")]
    NotFormallySymmetric(String),
    #[error("estimated memory {needed} bytes exceeds budget {budget}")]
    MemoryBudget { needed: usize, budget: usize },
    #[error("spectral parameter on the wrong side of the cut: {0}")]
    BranchViolation(String),
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolverNotConverged { residual: f64, iterations: usize },
    #[error("power iteration did not converge: {0}")]
    PowerIterationNotConverged(String),
    #[error("too few valid sample points: {0}")]
    TooFewValid(String),
    #[error("support escaped the grid: {0}")]
    SupportEscaped(String),
    #[error("time step violates the stability bound: {0}")]
    Cfl(String),
    #[error("problem exceeds the dense oracle cap: {0} unknowns")]
    OracleTooLarge(usize),
    #[error("eigendecomposition failed")]
    Eigen,
    #[error("fit window too short: {0}")]
    FitWindow(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
