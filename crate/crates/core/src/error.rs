use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("unsolvable level {level} after {attempts} attempts")]
    Unsolvable { level: String, attempts: usize },
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("file format: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("checksum mismatch in {0}")]
    Checksum(PathBuf),
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
