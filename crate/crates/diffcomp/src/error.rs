use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("loss must be a 1x1 scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("empty sequence")]
    EmptySequence,
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("malformed parameter bytes: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, Error>;
