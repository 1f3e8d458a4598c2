use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("no texts to embed")]
    EmptyInput,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding for text {index} has zero or non-finite norm")]
    Degenerate { index: usize },
    #[error("scripted embedder has no vector for `{0}`")]
    UnknownText(String),
    #[error("embedding backend: {0}")]
    Backend(String),
}

/// A unit-norm embedding. Similarity between two vectors is their dot
/// product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Scales `values` to unit Euclidean norm.
    pub fn normalized(values: Vec<f32>) -> Option<Self> {
        let norm = values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        Some(Self {
            values: values.into_iter().map(|v| (v as f64 / norm) as f32).collect(),
        })
    }

    /// Wraps values that are already unit norm (e.g. read back from disk).
    pub fn from_normalized(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Cosine similarity, clamped to [-1, 1].
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        dot.clamp(-1.0, 1.0)
    }
}

pub trait EmbedBackend: Send + Sync {
    /// Identifies the encoder; indexes built with one tag are not searchable
    /// with another.
    fn tag(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbeddingError>;
}

/// Normalizing front end over an embedding backend.
#[derive(Clone)]
pub struct Embedder {
    backend: Arc<dyn EmbedBackend>,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder").field("tag", &self.backend.tag()).finish()
    }
}

impl Embedder {
    pub fn new(backend: Arc<dyn EmbedBackend>) -> Self {
        Self { backend }
    }

    pub fn hashing(dimension: usize) -> Self {
        Self::new(Arc::new(HashingEmbedder::new(dimension)))
    }

    pub fn tag(&self) -> String {
        self.backend.tag()
    }

    pub fn dimension(&self) -> usize {
        self.backend.dimension()
    }

    pub fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        let raw = self.backend.embed_raw(texts)?;
        if raw.len() != texts.len() {
            return Err(EmbeddingError::Backend(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                raw.len()
            )));
        }
        let expected = self.backend.dimension();
        raw.into_iter()
            .enumerate()
            .map(|(index, v)| {
                if v.len() != expected {
                    return Err(EmbeddingError::DimensionMismatch { expected, got: v.len() });
                }
                EmbeddingVector::normalized(v).ok_or(EmbeddingError::Degenerate { index })
            })
            .collect()
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        Ok(self.embed(&[text])?.remove(0))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bag-of-words feature hashing over lowercase alphanumeric tokens. Fully
/// offline and deterministic; texts without shared tokens are orthogonal.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "hashing embedder needs a positive dimension");
        Self { dimension }
    }

    fn vector(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dimension];
        let lower = text.to_lowercase();
        let mut any = false;
        for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            v[(fnv1a(tok.as_bytes()) % self.dimension as u64) as usize] += 1.0;
            any = true;
        }
        if !any {
            v[(fnv1a(b"") % self.dimension as u64) as usize] = 1.0;
        }
        v
    }
}

impl EmbedBackend for HashingEmbedder {
    fn tag(&self) -> String {
        format!("hashing-v1-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Fixed text-to-vector table, for tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedEmbedder {
    pub dimension: usize,
    pub vectors: BTreeMap<String, Vec<f32>>,
}

impl ScriptedEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            vectors: BTreeMap::new(),
        }
    }

    pub fn with(mut self, text: &str, vector: Vec<f32>) -> Self {
        self.vectors.insert(text.to_string(), vector);
        self
    }

    pub fn from_file(path: &Path) -> Result<Self, EmbeddingError> {
        let text = std::fs::read_to_string(path).map_err(|e| EmbeddingError::Backend(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| EmbeddingError::Backend(e.to_string()))
    }
}

impl EmbedBackend for ScriptedEmbedder {
    fn tag(&self) -> String {
        format!("scripted-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| EmbeddingError::UnknownText(t.to_string()))
            })
            .collect()
    }
}
