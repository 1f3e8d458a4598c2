use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::index::{IndexError, VectorIndex};
use crate::gateway::Embedder;

pub const GUIDELINES_UNAVAILABLE: &str =
    "Guideline search is unavailable: no guideline index has been built for this workspace.";
pub const NO_GUIDELINE_HITS: &str = "No relevant guideline passages found.";

#[derive(Debug, thiserror::Error)]
pub enum GuidelineError {
    #[error("guideline corpus {path}: {message}")]
    Corpus { path: String, message: String },
    #[error("guideline `{0}` has an empty body")]
    EmptyBody(String),
    #[error("chunking: overlap_words ({overlap}) must be smaller than max_words ({max})")]
    Chunking { max: usize, overlap: usize },
    #[error("guideline k must be at least 1")]
    ZeroK,
    #[error("embedding failed for {} chunk(s): {}", .failed.len(), .failed.join(", "))]
    PartialIndex { failed: Vec<String> },
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    pub max_words: usize,
    pub overlap_words: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            max_words: 400,
            overlap_words: 80,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), GuidelineError> {
        if self.max_words == 0 || self.overlap_words >= self.max_words {
            return Err(GuidelineError::Chunking {
                max: self.max_words,
                overlap: self.overlap_words,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineChunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub title: String,
    /// Offset of the first word in the cleaned body.
    pub start_word: usize,
    pub body: String,
}

impl GuidelineChunk {
    pub fn key(&self) -> String {
        format!("{}#{:04}", self.doc_id, self.chunk_index)
    }
}

fn is_acknowledgement_heading(line: &str) -> bool {
    let bare: String = line
        .trim()
        .trim_start_matches(|c: char| c == '#' || c.is_ascii_digit() || c == '.' || c.is_whitespace())
        .trim_end_matches(':')
        .to_lowercase();
    matches!(
        bare.as_str(),
        "acknowledgements" | "acknowledgments" | "acknowledgement" | "acknowledgment"
    )
}

/// Drops acknowledgement sections and collapses whitespace. A section ends at
/// the next `#` heading, or at the first blank line when the document has no
/// `#` headings.
pub fn clean_text(raw: &str) -> String {
    let has_headings = raw.lines().any(|l| l.trim_start().starts_with('#'));
    let mut kept = Vec::new();
    let mut skipping = false;
    for line in raw.lines() {
        if is_acknowledgement_heading(line) {
            skipping = true;
            continue;
        }
        if skipping {
            let ends = if has_headings {
                line.trim_start().starts_with('#')
            } else {
                line.trim().is_empty()
            };
            if !ends {
                continue;
            }
            skipping = false;
        }
        kept.push(line);
    }
    kept.join("\n").split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Sliding word windows of `max_words` advancing by `max_words - overlap_words`.
/// Returns `(start_word, text)` pairs.
pub fn chunk_words(cleaned: &str, config: &ChunkingConfig) -> Vec<(usize, String)> {
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    let stride = config.max_words - config.overlap_words;
    let mut out = Vec::new();
    let mut start = 0;
    while start < words.len() {
        let end = (start + config.max_words).min(words.len());
        out.push((start, words[start..end].join(" ")));
        if end == words.len() {
            break;
        }
        start += stride;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineMeta {
    pub doc_id: String,
    pub title: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub year: Option<u32>,
    /// Body file relative to the corpus directory; defaults to `<doc_id>.txt`.
    #[serde(default)]
    pub file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuidelineDoc {
    pub meta: GuidelineMeta,
    pub body: String,
}

/// Reads `manifest.json` and the body files it names.
pub fn load_corpus(dir: &Path) -> Result<Vec<GuidelineDoc>, GuidelineError> {
    let corpus_err = |path: &Path, message: String| GuidelineError::Corpus {
        path: path.display().to_string(),
        message,
    };
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| corpus_err(&manifest_path, e.to_string()))?;
    let metas: Vec<GuidelineMeta> =
        serde_json::from_str(&text).map_err(|e| corpus_err(&manifest_path, e.to_string()))?;
    let mut seen = std::collections::BTreeSet::new();
    let mut docs = Vec::with_capacity(metas.len());
    for meta in metas {
        if !seen.insert(meta.doc_id.clone()) {
            return Err(corpus_err(
                &manifest_path,
                format!("duplicate doc_id `{}`", meta.doc_id),
            ));
        }
        let file = dir.join(meta.file.clone().unwrap_or_else(|| format!("{}.txt", meta.doc_id)));
        let body = std::fs::read_to_string(&file).map_err(|e| corpus_err(&file, e.to_string()))?;
        docs.push(GuidelineDoc { meta, body });
    }
    Ok(docs)
}

/// Chunked, embedded guideline corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineIndex {
    pub chunking: ChunkingConfig,
    pub titles: BTreeMap<String, String>,
    pub index: VectorIndex,
}

impl GuidelineIndex {
    pub fn save(&self, path: &Path) -> Result<(), GuidelineError> {
        let text = serde_json::to_string(self).map_err(|e| GuidelineError::Corpus {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| GuidelineError::Corpus {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, GuidelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| GuidelineError::Corpus {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let parsed: GuidelineIndex = serde_json::from_str(&text).map_err(|e| GuidelineError::Corpus {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let index = revalidate(parsed.index)?;
        Ok(GuidelineIndex { index, ..parsed })
    }
}

/// Re-inserts every entry so the key set and norms are checked.
fn revalidate(index: VectorIndex) -> Result<VectorIndex, GuidelineError> {
    let mut out = VectorIndex::new(index.encoder_tag(), index.dimension());
    for e in index.entries() {
        out.insert(e.key.clone(), e.vector.clone(), e.payload.clone())?;
    }
    Ok(out)
}

pub fn chunk_corpus(docs: &[GuidelineDoc], chunking: &ChunkingConfig) -> Result<Vec<GuidelineChunk>, GuidelineError> {
    chunking.validate()?;
    let mut chunks = Vec::new();
    for doc in docs {
        let cleaned = clean_text(&doc.body);
        if cleaned.is_empty() {
            return Err(GuidelineError::EmptyBody(doc.meta.doc_id.clone()));
        }
        for (chunk_index, (start_word, body)) in chunk_words(&cleaned, chunking).into_iter().enumerate() {
            chunks.push(GuidelineChunk {
                doc_id: doc.meta.doc_id.clone(),
                chunk_index,
                title: doc.meta.title.clone(),
                start_word,
                body,
            });
        }
    }
    Ok(chunks)
}

pub fn index_corpus(
    docs: &[GuidelineDoc],
    chunking: &ChunkingConfig,
    embedder: &Embedder,
) -> Result<GuidelineIndex, GuidelineError> {
    let chunks = chunk_corpus(docs, chunking)?;
    let mut index = VectorIndex::new(embedder.tag(), embedder.dimension());
    let mut failed = Vec::new();
    for chunk in &chunks {
        match embedder.embed_one(&chunk.body) {
            Ok(v) => index.insert(chunk.key(), v, chunk.body.clone())?,
            Err(e) => {
                tracing::warn!(chunk = %chunk.key(), error = %e, "embedding failed");
                failed.push(chunk.key());
            }
        }
    }
    if !failed.is_empty() {
        return Err(GuidelineError::PartialIndex { failed });
    }
    Ok(GuidelineIndex {
        chunking: *chunking,
        titles: docs
            .iter()
            .map(|d| (d.meta.doc_id.clone(), d.meta.title.clone()))
            .collect(),
        index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidelineSearchConfig {
    pub k: usize,
    pub excerpt_chars: usize,
}

impl Default for GuidelineSearchConfig {
    fn default() -> Self {
        Self {
            k: 3,
            excerpt_chars: 800,
        }
    }
}

impl GuidelineSearchConfig {
    pub fn validate(&self) -> Result<(), GuidelineError> {
        if self.k == 0 {
            return Err(GuidelineError::ZeroK);
        }
        Ok(())
    }
}

fn excerpt(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((cut, _)) => &text[..cut],
        None => text,
    }
}

/// Guideline Search tool. Without an index every query gets the
/// unavailable sentinel.
#[derive(Debug, Clone)]
pub struct GuidelineSearcher {
    index: Option<GuidelineIndex>,
    embedder: Embedder,
    config: GuidelineSearchConfig,
}

impl GuidelineSearcher {
    pub fn new(
        index: Option<GuidelineIndex>,
        embedder: Embedder,
        config: GuidelineSearchConfig,
    ) -> Result<Self, GuidelineError> {
        config.validate()?;
        if let Some(idx) = &index {
            idx.index.check_encoder(&embedder.tag())?;
        }
        Ok(Self {
            index,
            embedder,
            config,
        })
    }

    pub fn is_available(&self) -> bool {
        self.index.is_some()
    }

    /// Ranked `(doc_id, chunk key, similarity)` triples behind [`search`](Self::search).
    pub fn ranked(&self, query: &str) -> Option<Vec<(String, String, f64, String)>> {
        let idx = self.index.as_ref()?;
        let q = self.embedder.embed_one(query).ok()?;
        let hits = idx.index.search(&q, self.config.k).ok()?;
        Some(
            hits.into_iter()
                .map(|h| {
                    let doc_id = h.key.rsplit_once('#').map(|(d, _)| d.to_string()).unwrap_or_default();
                    (doc_id, h.key, h.similarity, h.payload)
                })
                .collect(),
        )
    }

    pub fn search(&self, query: &str) -> String {
        let Some(idx) = &self.index else {
            return GUIDELINES_UNAVAILABLE.to_string();
        };
        let Some(hits) = self.ranked(query) else {
            return GUIDELINES_UNAVAILABLE.to_string();
        };
        if hits.is_empty() {
            return NO_GUIDELINE_HITS.to_string();
        }
        hits.iter()
            .map(|(doc_id, _, _, body)| {
                let title = idx.titles.get(doc_id).map(String::as_str).unwrap_or(doc_id);
                format!("【{title}】 {}", excerpt(body, self.config.excerpt_chars))
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn thousand_words_three_chunks() {
        let chunks = chunk_words(&words(1000), &ChunkingConfig::default());
        assert_eq!(chunks.iter().map(|c| c.0).collect::<Vec<_>>(), [0, 320, 640]);
        assert_eq!(chunks[2].1.split(' ').count(), 360);
        assert!(chunk_words("", &ChunkingConfig::default()).is_empty());
        assert_eq!(chunk_words(&words(400), &ChunkingConfig::default()).len(), 1);
    }

    #[test]
    fn cleaning_drops_acknowledgements() {
        let raw = "# Intro\nBody  text\n\n# Acknowledgements\nWe thank people.\n# Diagnosis\nUltrasound first.";
        assert_eq!(clean_text(raw), "# Intro Body text # Diagnosis Ultrasound first.");
        let flat = "Intro text.\nAcknowledgments\nWe thank people.\n\nDiagnosis text.";
        assert_eq!(clean_text(flat), "Intro text. Diagnosis text.");
    }

    #[test]
    fn config_validation() {
        assert!(GuidelineSearchConfig {
            k: 0,
            excerpt_chars: 10
        }
        .validate()
        .is_err());
        assert!(ChunkingConfig {
            max_words: 10,
            overlap_words: 10
        }
        .validate()
        .is_err());
    }

    #[test]
    fn excerpt_truncates_on_char_boundary() {
        assert_eq!(excerpt("αβγδ", 2), "αβ");
        assert_eq!(excerpt("ab", 5), "ab");
    }

    #[test]
    fn missing_index_gives_sentinel() {
        let s = GuidelineSearcher::new(None, Embedder::hashing(16), GuidelineSearchConfig::default()).unwrap();
        assert_eq!(s.search("anything"), GUIDELINES_UNAVAILABLE);
    }
}
