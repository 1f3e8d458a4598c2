//! Experience repository: consolidation, persistence, snapshots and
//! retrieval.

mod consolidate;
mod snapshot;
mod store;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use consolidate::{ConsolidationOutcome, Consolidator};
pub use snapshot::{render_experience, DcpSnapshot, RetrievedDcp, NO_EXPERIENCE};
pub use store::{
    dcp_id, read_vector_file, Dcp, DcpFilter, DcpRepository, NewDcp, SkipRecord, StoreEvent, EVENTS_FILE, VECTORS_FILE,
};

use crate::gateway::{EmbeddingError, GatewayError};
use crate::knowledge::IndexError;

/// One ranked hit recorded in a [`RetrievalEvent`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub dcp_id: String,
    pub similarity: f64,
}

/// Log entry for one executed Experience Search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEvent {
    pub encounter_id: String,
    pub step_index: usize,
    pub query: String,
    pub returned: Vec<RetrievedRef>,
}

#[derive(Debug, thiserror::Error)]
pub enum DcpError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Corrupt { file: String, line: usize, message: String },
    #[error("no DCP with id `{0}`")]
    NotFound(String),
    #[error("snapshot k={k} exceeds repository size {size}")]
    Range { k: usize, size: usize },
    #[error("repository encoder is `{repository}`, got `{given}`")]
    EncoderMismatch { repository: String, given: String },
    #[error("vector dimension {got} does not match repository dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("pattern vector is not unit norm")]
    NotNormalized,
    #[error("DCP field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("retrieval k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl DcpError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DcpError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
