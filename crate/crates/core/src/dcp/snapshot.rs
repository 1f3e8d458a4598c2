use serde::{Deserialize, Serialize};

use super::store::Dcp;
use super::DcpError;
use crate::gateway::{Embedder, EmbeddingVector};
use crate::knowledge::VectorIndex;

pub const NO_EXPERIENCE: &str = "No relevant prior experience found.";

/// A retrieved DCP with its cosine similarity to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDcp {
    pub dcp: Dcp,
    pub similarity: f64,
}

/// Read-only repository view holding the DCPs with exposure index <= `limit`.
/// Retracted DCPs stay listed but are never retrieved.
#[derive(Debug, Clone)]
pub struct DcpSnapshot {
    limit: usize,
    encounters_seen: usize,
    dcps: Vec<Dcp>,
    index: VectorIndex,
}

impl DcpSnapshot {
    pub(crate) fn build(
        encoder_tag: Option<String>,
        dimension: Option<usize>,
        dcps: &[Dcp],
        vectors: &[EmbeddingVector],
        encounters_seen: usize,
    ) -> Result<Self, DcpError> {
        let mut index = VectorIndex::new(encoder_tag.unwrap_or_default(), dimension.unwrap_or(0));
        for (d, v) in dcps.iter().zip(vectors) {
            if !d.retracted {
                index.insert(d.id.clone(), v.clone(), d.pattern.clone())?;
            }
        }
        Ok(Self {
            limit: dcps.len(),
            encounters_seen,
            dcps: dcps.to_vec(),
            index,
        })
    }

    pub fn empty() -> Self {
        Self {
            limit: 0,
            encounters_seen: 0,
            dcps: Vec::new(),
            index: VectorIndex::new("", 0),
        }
    }

    /// The snapshot's k.
    pub fn limit(&self) -> usize {
        self.limit
    }

    /// Accrual encounters processed when this snapshot was current.
    pub fn encounters_seen(&self) -> usize {
        self.encounters_seen
    }

    pub fn dcps(&self) -> &[Dcp] {
        &self.dcps
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.dcps.iter().map(|d| d.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&Dcp> {
        self.dcps.iter().find(|d| d.id == id)
    }

    /// Number of DCPs that can be retrieved.
    pub fn searchable(&self) -> usize {
        self.index.len()
    }

    pub fn encoder_tag(&self) -> Option<&str> {
        (!self.index.encoder_tag().is_empty()).then(|| self.index.encoder_tag())
    }

    /// Top-`k` non-retracted DCPs by pattern similarity, dropping hits below
    /// `floor`.
    pub fn retrieve_vector(
        &self,
        query: &EmbeddingVector,
        k: usize,
        floor: f64,
    ) -> Result<Vec<RetrievedDcp>, DcpError> {
        if k == 0 {
            return Err(DcpError::ZeroK);
        }
        if self.index.is_empty() {
            return Ok(Vec::new());
        }
        let hits = self.index.search(query, k)?;
        Ok(hits
            .into_iter()
            .filter(|h| h.similarity >= floor)
            .map(|h| RetrievedDcp {
                dcp: self.get(&h.key).expect("indexed id is in snapshot").clone(),
                similarity: h.similarity,
            })
            .collect())
    }

    pub fn retrieve(
        &self,
        embedder: &Embedder,
        query: &str,
        k: usize,
        floor: f64,
    ) -> Result<Vec<RetrievedDcp>, DcpError> {
        if k == 0 {
            return Err(DcpError::ZeroK);
        }
        if self.index.is_empty() {
            return Ok(Vec::new());
        }
        self.index.check_encoder(&embedder.tag())?;
        let q = embedder.embed_one(query)?;
        self.retrieve_vector(&q, k, floor)
    }
}

/// Agent-visible Experience Search observation.
pub fn render_experience(hits: &[RetrievedDcp]) -> String {
    if hits.is_empty() {
        return NO_EXPERIENCE.to_string();
    }
    hits.iter()
        .enumerate()
        .map(|(i, h)| {
            format!(
                "Retrieved experience {} (similarity {:.3}):\nExperience Pattern: {}\nTest Ordering Experience: {}\nDiagnostic Decision Experience: {}",
                i + 1,
                h.similarity,
                h.dcp.pattern,
                h.dcp.ordering,
                h.dcp.decision
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}
