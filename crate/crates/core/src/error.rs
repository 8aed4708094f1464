use std::path::PathBuf;

use thiserror::Error;

use crate::fhgraph::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("degenerate row {row} in {op}: every entry is masked")]
    DegenerateRow { op: &'static str, row: usize },

    #[error("config error: {field}: {msg}")]
    Config { field: String, msg: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value in {path}")]
    NonFinite { path: String },

    #[error("edge family violation ({family}): {src} -> {dst}: {msg}")]
    FamilyViolation {
        family: &'static str,
        src: NodeId,
        dst: NodeId,
        msg: &'static str,
    },

    #[error("graph integrity error: {0}")]
    Integrity(String),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("line {line}: malformed JSON: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: schema violation: {msg}")]
    Schema { line: usize, msg: String },

    #[error("checkpoint schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("empty batch: no node participates in the loss")]
    EmptyBatch,

    #[error("metric {0} is undefined for this label set")]
    UndefinedMetric(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
