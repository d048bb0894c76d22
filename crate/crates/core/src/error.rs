use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },

    #[error("IPDD did not reach consensus after {iterations} iterations (gap {gap:.3e})")]
    IpddNotConverged { iterations: usize, gap: f64 },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    EigenNotConverged { iterations: usize, residual: f64 },

    #[error("Jain index undefined: all rates are zero")]
    AllZeroRates,

    #[error("codebook error: {0}")]
    Codebook(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
