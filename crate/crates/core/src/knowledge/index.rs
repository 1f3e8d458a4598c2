use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::EmbeddingVector;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate index key `{0}`")]
    DuplicateKey(String),
    #[error("vector for `{key}` has dimension {got}, index expects {expected}")]
    Dimension { key: String, expected: usize, got: usize },
    #[error("vector for `{0}` is not unit norm")]
    NotNormalized(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index was built with encoder `{built}`, current encoder is `{current}`")]
    EncoderMismatch { built: String, current: String },
    #[error("index file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub key: String,
    pub vector: EmbeddingVector,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub key: String,
    pub similarity: f64,
    pub payload: String,
}

/// Orders hits by descending similarity, then ascending key.
pub fn rank_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.similarity.total_cmp(&a.similarity).then_with(|| a.key.cmp(&b.key))
}

/// Exact cosine index scanned in full on every query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    encoder_tag: String,
    dimension: usize,
    entries: Vec<IndexEntry>,
    #[serde(skip)]
    keys: BTreeSet<String>,
}

const NORM_TOLERANCE: f64 = 1e-4;

impl VectorIndex {
    pub fn new(encoder_tag: impl Into<String>, dimension: usize) -> Self {
        Self {
            encoder_tag: encoder_tag.into(),
            dimension,
            entries: Vec::new(),
            keys: BTreeSet::new(),
        }
    }

    pub fn encoder_tag(&self) -> &str {
        &self.encoder_tag
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn contains(&self, key: &str) -> bool {
        self.keys.contains(key)
    }

    pub fn insert(
        &mut self,
        key: impl Into<String>,
        vector: EmbeddingVector,
        payload: impl Into<String>,
    ) -> Result<(), IndexError> {
        let key = key.into();
        if vector.dimension() != self.dimension {
            return Err(IndexError::Dimension {
                key,
                expected: self.dimension,
                got: vector.dimension(),
            });
        }
        if (vector.norm() - 1.0).abs() > NORM_TOLERANCE {
            return Err(IndexError::NotNormalized(key));
        }
        if !self.keys.insert(key.clone()) {
            return Err(IndexError::DuplicateKey(key));
        }
        self.entries.push(IndexEntry {
            key,
            vector,
            payload: payload.into(),
        });
        Ok(())
    }

    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.search_where(query, k, |_| true)
    }

    /// Top-k over the entries accepted by `keep`.
    pub fn search_where<F>(&self, query: &EmbeddingVector, k: usize, keep: F) -> Result<Vec<SearchHit>, IndexError>
    where
        F: Fn(&IndexEntry) -> bool,
    {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dimension() != self.dimension && !self.entries.is_empty() {
            return Err(IndexError::Dimension {
                key: "<query>".into(),
                expected: self.dimension,
                got: query.dimension(),
            });
        }
        let mut hits: Vec<SearchHit> = self
            .entries
            .iter()
            .filter(|e| keep(e))
            .map(|e| SearchHit {
                key: e.key.clone(),
                similarity: query.cosine(&e.vector),
                payload: e.payload.clone(),
            })
            .collect();
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, rank_order);
            hits.truncate(k);
        }
        hits.sort_by(rank_order);
        Ok(hits)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let err = |message: String| IndexError::File {
            path: path.display().to_string(),
            message,
        };
        let text = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let err = |message: String| IndexError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut index: VectorIndex = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        for e in &index.entries {
            if !index.keys.insert(e.key.clone()) {
                return Err(err(format!("duplicate key `{}`", e.key)));
            }
            if e.vector.dimension() != index.dimension {
                return Err(err(format!("entry `{}` has wrong dimension", e.key)));
            }
        }
        Ok(index)
    }

    pub fn check_encoder(&self, current: &str) -> Result<(), IndexError> {
        if self.encoder_tag != current {
            return Err(IndexError::EncoderMismatch {
                built: self.encoder_tag.clone(),
                current: current.to_string(),
            });
        }
        Ok(())
    }
}
