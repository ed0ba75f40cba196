use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum CoreError {
    #[error("field is not differentiable at {0:?}")]
    NotDifferentiable(Vec<f64>),
    #[error("every sample point hit a non-differentiability set")]
    DegenerateSampling,
    #[error("regularity requirement not met: {0}")]
    RegularityError(String),
    #[error("mollification quadrature is limited to dimension <= 3 (got {0})")]
    QuadratureBudgetExceeded(usize),
    #[error("degree cap {0} leaves only the zero polynomial")]
    DegreeCapTooSmall(usize),
    #[error("state norm exceeded {bound} at t = {t}")]
    BlowUp { t: f64, bound: f64 },
    #[error("no selection of the generalized Jacobian is available at t = {0}")]
    SelectionUnavailable(f64),
    #[error("variation window does not fit: {0}")]
    SupportError(String),
    #[error("variation kind not applicable: {0}")]
    KindError(String),
    #[error("order fit unstable (R^2 = {r2:.4})")]
    OrderFitUnstable { r2: f64 },
    #[error("no nontrivial multiplier candidate: {0}")]
    NoCandidate(String),
    #[error("dimension mismatch: {0}")]
    DimensionError(String),
    #[error("integration failed: {0}")]
    IntegrationFailure(String),
    #[error("malformed field: {0}")]
    InvalidField(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
