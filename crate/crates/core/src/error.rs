use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no exact or oracle distance for set variant {0}")]
    UnsupportedDistance(String),
    #[error("target set is not strictly inside the domain (clearance {clearance:e} <= {tol:e})")]
    DegenerateDomain { clearance: f64, tol: f64 },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("jump map returned no candidates at a point of the jump set")]
    EmptyJumpMap,
    #[error("hybrid time ({t}, {j}) is outside the arc's domain")]
    OutOfDomain { t: f64, j: usize },
    #[error("initial condition is not in the closure of C union D or outside the bounds")]
    BadInitialCondition,
    #[error("arc ends at total time {available} before the requested {requested}")]
    HorizonTooShort { available: f64, requested: f64 },
    #[error("no grid point survived the invariance test")]
    EmptyEstimate,
    #[error("certificate has no proper indicator")]
    MissingIndicator,
    #[error("certificate has no barrier function")]
    MissingBarrier,
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid arc: {0}")]
    InvalidArc(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable machine-readable tag used in CLI error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedDistance(_) => "UnsupportedDistance",
            Error::DegenerateDomain { .. } => "DegenerateDomain",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EmptyJumpMap => "EmptyJumpMap",
            Error::OutOfDomain { .. } => "OutOfDomain",
            Error::BadInitialCondition => "BadInitialCondition",
            Error::HorizonTooShort { .. } => "HorizonTooShort",
            Error::EmptyEstimate => "EmptyEstimate",
            Error::MissingIndicator => "MissingIndicator",
            Error::MissingBarrier => "MissingBarrier",
            Error::DomainViolation(_) => "DomainViolation",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::InvalidArc(_) => "InvalidArc",
            Error::Parse(_) => "Parse",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
