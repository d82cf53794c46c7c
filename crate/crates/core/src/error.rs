use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GrapeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GrapeError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("degenerate mask: row {row} has no allowed entry")]
    DegenerateMask { row: usize },

    #[error("index {id} out of range for table with {len} rows")]
    Index { id: usize, len: usize },

    #[error("backward: {0}")]
    Backward(String),

    #[error("training invariant violated: {0}")]
    TrainingInvariant(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("ingestion: {0}")]
    Ingestion(String),

    #[error("interacted items without indicator rows: {0:?}")]
    MissingIndicators(Vec<u64>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("scoring: {0}")]
    Scoring(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch} step {step} (normal {normal}, green {green})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        normal: f64,
        green: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GrapeError {
    /// Bad input or configuration, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            GrapeError::Config(_)
                | GrapeError::Parse { .. }
                | GrapeError::Ingestion(_)
                | GrapeError::MissingIndicators(_)
                | GrapeError::Json(_)
                | GrapeError::Csv(_)
        )
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GrapeError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        GrapeError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
