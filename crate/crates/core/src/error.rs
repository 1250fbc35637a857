use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dynamics kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: &'static str, got: &'static str },
    #[error("cannot place {requested} obstacles: only {placed} fit within the sampling budget")]
    OverDense { requested: usize, placed: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("model container: {0}")]
    Container(String),
    #[error(transparent)]
    Tensor(#[from] diffcomp::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
