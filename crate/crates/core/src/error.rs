use thiserror::Error;

/// Errors produced by fitting, projection, and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate basis: Gram matrix condition number {condition:.3e} exceeds 1e12")]
    DegenerateBasis { condition: f64 },

    #[error(
        "coordinate design is rank deficient (condition number {condition:.3e}){}; \
         use ridge coordinates instead",
        location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default()
    )]
    CoordinateRank { condition: f64, location: Option<String> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical conditioning: {0}")]
    Conditioning(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
