use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed graph file: {0}")]
    MalformedHeader(String),

    #[error("non-finite feature at row {row}")]
    NonFiniteFeature { row: usize },

    #[error("node index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("graph has no edges, smoothness is undefined")]
    NoEdges,

    #[error("infeasible injection: {0}")]
    InfeasibleInjection(String),

    #[error("insufficient normal nodes: need more than {needed}, found {found}")]
    InsufficientNormals { needed: usize, found: usize },

    #[error("insufficient anomalous nodes: need {needed}, found {found}")]
    InsufficientAnomalies { needed: usize, found: usize },

    #[error("graph has no labels")]
    MissingLabels,

    #[error("degenerate embedding: zero-norm row {row} in cosine similarity")]
    DegenerateEmbedding { row: usize },

    #[error("tape does not end in a scalar (last node is {rows}x{cols})")]
    NotScalar { rows: usize, cols: usize },

    #[error("non-finite training loss at epoch {epoch} on dataset {dataset} (param norm {param_norm})")]
    NonFiniteLoss {
        epoch: usize,
        dataset: String,
        param_norm: f64,
    },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable process exit code: 2 config/contract, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Json(_) => 2,
            Error::NonFinite { .. }
            | Error::NonFiniteLoss { .. }
            | Error::DegenerateEmbedding { .. }
            | Error::NotScalar { .. } => 4,
            _ => 3,
        }
    }
}
