use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum LntError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("loss does not depend on any tensor that requires a gradient")]
    DetachedGraph,

    #[error("input of length {got} is shorter than the required {needed}")]
    TooShort { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contrastive term needs at least one negative")]
    EmptyNegatives,

    #[error("no valid terms: {0}")]
    NoValidTerms(String),

    #[error("horizon k={k} out of range 1..={max}")]
    Horizon { k: usize, max: usize },

    #[error("{path}: row {row}: {msg}")]
    Parse {
        path: String,
        row: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("labels contain a single class; both normal and anomalous points are required")]
    SingleClass,

    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },

    #[error("data: {0}")]
    Data(String),

    #[error("model has no decoder parameters")]
    MissingDecoder,

    #[error("anomaly injection: {0}")]
    Injection(String),

    #[error("training failed at epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<LntError>,
    },
}

impl LntError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        LntError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LntError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, LntError>;
