use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("extent mismatch: {from:?} has {from_len} elements, {to:?} has {to_len}")]
    ExtentMismatch {
        from: Vec<usize>,
        from_len: usize,
        to: Vec<usize>,
        to_len: usize,
    },

    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("layer `{layer}`: {detail}")]
    InvalidLayer { layer: String, detail: String },

    #[error("backward pass requires a forward cache for layer `{0}`")]
    MissingCache(String),

    #[error("index {index} outside validity range {range}")]
    OutOfRange { index: i64, range: &'static str },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("{}: parse error at offset {offset}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("manifest entry `{id}` references missing file {}", path.display())]
    MissingFile { id: String, path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    CheckFailed(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }
}
