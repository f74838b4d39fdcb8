use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimMismatch { what: String, expected: usize, got: usize },
    #[error("impossible split: {0}")]
    ImpossibleSplit(String),
    #[error("label out of range: {0}")]
    LabelOutOfRange(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("non-finite loss component `{0}`")]
    NonFinite(String),
    #[error("text inputs required: {0}")]
    MissingText(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("manifest {path}: {msg}")]
    Manifest { path: String, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn manifest(path: impl AsRef<std::path::Path>, msg: impl Into<String>) -> Self {
        Error::Manifest { path: path.as_ref().display().to_string(), msg: msg.into() }
    }
}
