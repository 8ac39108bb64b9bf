use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown finding id {0}")]
    UnknownFinding(usize),

    #[error("unknown disease id {0}")]
    UnknownDisease(usize),

    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("{what} size {size} exceeds cap {cap}")]
    CapExceeded {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("signed subset sum is not positive ({0:e}); cancellation exhausted working precision")]
    NumericalBreakdown(f64),

    #[error("internal error: {0}")]
    Internal(String),
}
