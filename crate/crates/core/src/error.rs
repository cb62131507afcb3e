use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("non-finite value in parameter vector at index {index}")]
    NonFinite { index: usize },

    #[error("invalid model spec: {0}")]
    InvalidModel(String),

    #[error("invalid example: {0}")]
    InvalidExample(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("clients_per_round ({requested}) exceeds num_clients ({available})")]
    TooManyClients { requested: usize, available: usize },

    #[error("insufficient examples: need {needed}, have {available}")]
    InsufficientExamples { needed: usize, available: usize },

    #[error("cannot aggregate an empty set of client updates")]
    EmptyAggregation,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
