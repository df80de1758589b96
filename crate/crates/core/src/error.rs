//! Crate-wide error type. Every variant maps onto one stable class name so
//! front ends can report machine-parsable failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeepIdaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid tape: {0}")]
    InvalidTape(String),

    #[error("stratification failure: {0}")]
    StratificationFailure(String),

    #[error("no results: {0}")]
    NoResults(String),

    #[error("invalid selection: {0}")]
    InvalidSelection(String),

    #[error("parse error: {0}")]
    ParseError(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl DeepIdaError {
    /// Stable class name, used in CLI error lines (`error[Class]: message`).
    pub fn class(&self) -> &'static str {
        match self {
            DeepIdaError::InvalidInput(_) => "InvalidInput",
            DeepIdaError::ShapeMismatch(_) => "ShapeMismatch",
            DeepIdaError::InvalidLabels(_) => "InvalidLabels",
            DeepIdaError::SingularMatrix(_) => "SingularMatrix",
            DeepIdaError::NumericalFailure(_) => "NumericalFailure",
            DeepIdaError::InvalidSpec(_) => "InvalidSpec",
            DeepIdaError::InvalidBatch(_) => "InvalidBatch",
            DeepIdaError::InvalidTape(_) => "InvalidTape",
            DeepIdaError::StratificationFailure(_) => "StratificationFailure",
            DeepIdaError::NoResults(_) => "NoResults",
            DeepIdaError::InvalidSelection(_) => "InvalidSelection",
            DeepIdaError::ParseError(_) => "ParseError",
            DeepIdaError::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, DeepIdaError>;
