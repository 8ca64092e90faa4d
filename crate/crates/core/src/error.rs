use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: io::Error,
    },
    #[error("I/O error on {path}: {source}")]
    Path {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("format error in field `{field}`: {detail}")]
    Format { field: &'static str, detail: String },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label `{label}` has dims {found:?}, expected {expected:?}")]
    DimensionMismatch {
        label: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("duplicate label name `{0}`")]
    DuplicateLabel(String),
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("label `{0}` is not bound in the merger parameters")]
    UnboundLabel(String),
    #[error("{name} = {value} is out of range: {expected}")]
    Range {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
