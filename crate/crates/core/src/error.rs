use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid height field: {0}")]
    InvalidHeightField(String),
    #[error("set has no boundary inside the slab (empty or full)")]
    NoBoundary,
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("translation rejected: {0}")]
    Translation(String),
    #[error("kernel is not integrable: {0}")]
    NonIntegrable(String),
    #[error("functional `{0}` is not pairwise-representable; use the generic submodular solver")]
    NotPairwise(&'static str),
    #[error("instance too large for exhaustive enumeration: {0} configurations")]
    InstanceTooLarge(f64),
    #[error("slab margin exhausted: {0}")]
    SlabMargin(String),
    #[error("step solver failed to certify optimality (gap {gap:e} > tolerance {tol:e})")]
    NotCertified { gap: f64, tol: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("config rejected: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("weight cache does not match: {0}")]
    CacheMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::param(name, reason)
}
