use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient pool: {0}")]
    InsufficientPool(String),

    #[error("task failed: {0}")]
    Task(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed {}:\n  {}", path.display(), problems.join("\n  "))]
    Malformed {
        path: PathBuf,
        problems: Vec<String>,
    },
}

/// Failures while reading or writing datasets and model files.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty dataset")]
    Empty,

    #[error("malformed manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },

    #[error("missing feature file for participant {id}: {path}")]
    MissingFile { id: String, path: PathBuf },

    #[error("shape mismatch for participant {id}: expected {expected} bytes, found {found}")]
    ShapeMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite feature value for participant {id} at index {index}")]
    NonFinite { id: String, index: usize },

    #[error("duplicate participant id {0}")]
    DuplicateId(String),

    #[error("group {group} of participant {id} outside 0..{n_groups}")]
    BadGroup {
        id: String,
        group: usize,
        n_groups: usize,
    },

    #[error("malformed model file: {0}")]
    Model(String),

    #[error("header mismatch on {field}: model has {model}, data has {data}")]
    HeaderMismatch {
        field: &'static str,
        model: String,
        data: String,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
