use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("state {state} has target mass but zero source mass")]
    UnsolvableSupport { state: usize },
    #[error("cumulative source mass vanishes at sorted position {position}")]
    DegeneratePrefix { position: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("ratio denominator vanished for dimension {dim} at state {state}")]
    DegenerateState { dim: usize, state: usize },
    #[error("non-finite score-entropy term at dim {dim}, y {y}, t {t}")]
    NonFiniteTerm { dim: usize, y: usize, t: f64 },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
