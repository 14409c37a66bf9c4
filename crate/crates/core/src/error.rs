use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("architecture mismatch: expected {expected}, got {got}")]
    ArchMismatch { expected: String, got: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("sequence too short: need at least {need} tokens, got {got}")]
    SequenceTooShort { need: usize, got: usize },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
