use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid array geometry: {0}")]
    Geometry(String),

    #[error("unknown array preset or file: {0}")]
    UnknownArray(String),

    #[error("grid subdivision level {0} out of range (0..=6)")]
    GridLevel(u32),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("signal too short: {needed} samples needed, got {got}")]
    SignalTooShort { needed: usize, got: usize },

    #[error("frame stream ended after {got} of {needed} frames")]
    IncompleteBlock { needed: usize, got: usize },

    #[error("room configuration is not physically realizable: {0}")]
    Room(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
