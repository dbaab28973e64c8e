use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Head input too close to a singular configuration.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    /// Minimum eigenvalue of the QCQP matrix is (numerically) repeated.
    #[error("degenerate representation: eigengap {gap:e} below threshold {threshold:e}")]
    DegenerateRepresentation { gap: f64, threshold: f64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
