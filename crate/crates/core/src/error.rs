use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("non-finite value in row {row}")]
    NonFiniteValue { row: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("class {0} has no rows")]
    EmptyClass(i64),
    #[error("invalid label {label} in row {row}: labels must be non-negative")]
    InvalidLabel { row: usize, label: i64 },
    #[error("zero vector in row {row}")]
    ZeroVector { row: usize },
    #[error("need {needed} classes, set has {available}")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("class {class} has {available} rows, need {needed}")]
    InsufficientRowsInClass {
        class: i64,
        available: usize,
        needed: usize,
    },
    #[error("row {0} is not present in the feature matrix")]
    MissingRow(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("index {index} out of range for matrix of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("encoding row {0} is all zero")]
    DegenerateRow(usize),
    #[error("expected a {expected} distance matrix, got {actual}")]
    WrongKind {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("episode {index} failed: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}
