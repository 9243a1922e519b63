use thiserror::Error;

/// Errors raised by the laboratory's operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("model `{model}` lacks capability: {capability}")]
    CapabilityMissing { model: String, capability: String },
    #[error("unknown builtin `{0}`")]
    UnknownBuiltin(String),
    #[error("anchor is not in the subdifferential hull (distance {distance:e})")]
    AnchorNotInHull { distance: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid dimension {0} exceeds the supported maximum of 3")]
    DimensionTooLarge(usize),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("gradient cross-validation failed: finite difference {fd:?} is {distance:e} away from the subdifferential")]
    InconsistentGradient { fd: Vec<f64>, distance: f64 },
    #[error("finite directions do not span a subspace: {0}")]
    NotASubspace(String),
    #[error("no admissible sample points for the limiting Hessian bundle")]
    EmptyBundle,
    #[error("prox parameter too large: {0}")]
    LambdaTooLarge(String),
    #[error("Hessian is singular (smallest eigenvalue {0:e})")]
    SingularHessian(f64),
    #[error("problem file: {0}")]
    Problem(String),
}

pub type Result<T> = std::result::Result<T, Error>;
