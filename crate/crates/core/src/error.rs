use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate projection axis (zero norm)")]
    DegenerateAxis,

    #[error("empty batch")]
    EmptyBatch,

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("{0}: dataset is empty")]
    EmptyDataset(PathBuf),

    #[error("client {client_id} diverged (non-finite loss) in round {round}")]
    Divergence { client_id: usize, round: usize },

    #[error("degenerate round: all client gradients are zero")]
    DegenerateRound,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("decomposition identity violated: local {local} + shift {shift} + aggregation {aggregation} != global {global}")]
    InternalConsistency {
        local: f64,
        shift: f64,
        aggregation: f64,
        global: f64,
    },

    #[error("evaluating model {model} on shard {shard}: {source}")]
    CrossEval {
        model: usize,
        shard: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 3,
            Error::Io(_)
            | Error::Csv(_)
            | Error::Parse { .. }
            | Error::Schema { .. }
            | Error::EmptyDataset(_) => 4,
            Error::CrossEval { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
