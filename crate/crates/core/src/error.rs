use alloc::string::String;

/// Errors raised across the toolkit.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("class id {id} out of range for {classes} classes")]
    Index { id: usize, classes: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("unknown category {0}")]
    UnknownCategory(usize),
    #[error("insufficient features for category {category}: need {need}, have {have}")]
    InsufficientFeatures {
        category: usize,
        need: usize,
        have: usize,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("category {0} is outside the taxonomy")]
    MissingCategory(usize),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(what: &str, expected: usize, got: usize) -> Error {
    Error::Shape(alloc::format!("{what}: expected {expected}, got {got}"))
}
