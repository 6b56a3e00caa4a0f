use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point lies exactly on the decision boundary")]
    OnBoundary,

    #[error("dataset has no true boundary normal")]
    NoTrueNormal,

    #[error("malformed IDX data: {0}")]
    Idx(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("rescaled curves do not overlap")]
    EmptyOverlap,

    #[error("curve is not a crossover: {0}")]
    NotCrossover(String),

    #[error("temperature grid exhausted: {0}")]
    GridExhausted(String),

    #[error("store belongs to spec {found}, expected {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
