use std::path::PathBuf;

pub type Result<T, E = DmbError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum DmbError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("corpus has {found} distinct bytes but the vocabulary holds {n}")]
    VocabularyOverflow { found: usize, n: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u8, expected: u8 },
    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        source: dmb_core::Error,
    },
    #[error(transparent)]
    Core(#[from] dmb_core::Error),
}
