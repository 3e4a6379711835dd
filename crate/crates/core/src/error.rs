use std::path::PathBuf;

use thiserror::Error;

use crate::models::ModelKind;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report. [`Error::code`] gives the stable
/// `E_*` identifier used in CLI diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("train size {n_train} must lie strictly between 0 and {total}")]
    BadSplit { n_train: usize, total: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("plan {0} has zero spatial extent")]
    Degenerate(String),
    #[error("plan {plan}: category {category:?} is not in the vocabulary")]
    UnknownCategory { plan: String, category: String },
    #[error("plan {0} produces a graph without edges")]
    EmptyEdges(String),
    #[error("cannot batch an empty list of graphs")]
    EmptyBatch,
    #[error("index out of range: {0}")]
    BadIndex(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape has already been consumed by a backward pass")]
    TapeConsumed,
    #[error("no data: {0}")]
    EmptyData(String),
    #[error("unsupported checkpoint format_version {0}")]
    Version(u32),
    #[error("checkpoint does not match the expected model: {0}")]
    ConfigMismatch(String),
    #[error("perplexity {perplexity} must lie strictly between 1 and {n_points}")]
    BadPerplexity { perplexity: f64, n_points: usize },
    #[error("{kind} depth {depth}: {source}")]
    Cell {
        kind: ModelKind,
        depth: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Schema { .. } => "E_SCHEMA",
            Error::BadSplit { .. } => "E_BAD_SPLIT",
            Error::BadConfig(_) => "E_BAD_CONFIG",
            Error::Degenerate(_) => "E_DEGENERATE",
            Error::UnknownCategory { .. } => "E_UNKNOWN_CATEGORY",
            Error::EmptyEdges(_) => "E_EMPTY_EDGES",
            Error::EmptyBatch => "E_EMPTY_BATCH",
            Error::BadIndex(_) => "E_BAD_INDEX",
            Error::Shape(_) => "E_SHAPE",
            Error::NotScalar(_) => "E_NOT_SCALAR",
            Error::TapeConsumed => "E_TAPE_CONSUMED",
            Error::EmptyData(_) => "E_EMPTY_DATA",
            Error::Version(_) => "E_VERSION",
            Error::ConfigMismatch(_) => "E_CONFIG_MISMATCH",
            Error::BadPerplexity { .. } => "E_BAD_PERPLEXITY",
            Error::Cell { source, .. } => source.code(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
