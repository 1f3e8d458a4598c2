use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::snapshot::DcpSnapshot;
use super::DcpError;
use crate::gateway::EmbeddingVector;
use crate::protocol::DcpFields;

pub const EVENTS_FILE: &str = "events.ndjson";
pub const VECTORS_FILE: &str = "vectors.bin";

/// A consolidated experience record with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dcp {
    pub id: String,
    pub pattern: String,
    pub ordering: String,
    pub decision: String,
    pub exposure_index: usize,
    pub pathology: String,
    pub source_correct: bool,
    pub source_encounter_id: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub retracted: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retraction_reasons: Vec<String>,
}

impl Dcp {
    pub fn fields(&self) -> DcpFields {
        DcpFields {
            pattern: self.pattern.clone(),
            ordering: self.ordering.clone(),
            decision: self.decision.clone(),
        }
    }
}

pub fn dcp_id(exposure_index: usize) -> String {
    format!("dcp-{exposure_index:06}")
}

/// Provenance supplied by the caller when inserting.
#[derive(Debug, Clone, PartialEq)]
pub struct NewDcp {
    pub fields: DcpFields,
    pub pathology: String,
    pub source_correct: bool,
    pub source_encounter_id: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StoreEvent {
    Insert {
        encoder_tag: String,
        #[serde(flatten)]
        dcp: Dcp,
    },
    Retract {
        id: String,
        reason: String,
        at: DateTime<Utc>,
    },
    /// An accrual encounter that produced no DCP. Consumes no exposure index.
    Skip {
        encounter_id: String,
        reason: String,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub encounter_id: String,
    pub reason: String,
    pub at: DateTime<Utc>,
}

/// Listing filter for curation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DcpFilter {
    pub pathology: Option<String>,
    pub source_correct: Option<bool>,
    pub min_exposure: Option<usize>,
    pub max_exposure: Option<usize>,
    pub include_retracted: bool,
}

impl DcpFilter {
    pub fn all() -> Self {
        Self {
            include_retracted: true,
            ..Default::default()
        }
    }

    pub fn matches(&self, d: &Dcp) -> bool {
        self.pathology
            .as_ref()
            .is_none_or(|p| p.eq_ignore_ascii_case(&d.pathology))
            && self.source_correct.is_none_or(|c| c == d.source_correct)
            && self.min_exposure.is_none_or(|m| d.exposure_index >= m)
            && self.max_exposure.is_none_or(|m| d.exposure_index <= m)
            && (self.include_retracted || !d.retracted)
    }
}

/// Append-only experience repository. On disk it is an event log plus a
/// vector file; in memory it is the replayed state.
#[derive(Debug, Clone, Default)]
pub struct DcpRepository {
    dir: Option<PathBuf>,
    encoder_tag: Option<String>,
    dimension: Option<usize>,
    dcps: Vec<Dcp>,
    vectors: Vec<EmbeddingVector>,
    by_id: BTreeMap<String, usize>,
    skips: Vec<SkipRecord>,
    /// Accrual encounters in processing order; `true` when the encounter
    /// produced a DCP.
    processed: Vec<(String, bool)>,
}

fn write_vector_record(out: &mut Vec<u8>, id: &str, v: &EmbeddingVector) {
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    out.extend_from_slice(&(v.dimension() as u32).to_le_bytes());
    for x in v.values() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Parses `vectors.bin`: repeated `u32 id_len, id, u32 dim, dim * f32`, all
/// little-endian.
pub fn read_vector_file(bytes: &[u8]) -> Result<BTreeMap<String, EmbeddingVector>, DcpError> {
    let corrupt = |message: String| DcpError::Corrupt {
        file: VECTORS_FILE.into(),
        line: 0,
        message,
    };
    let mut out = BTreeMap::new();
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], DcpError> {
        let end = pos
            .checked_add(n)
            .filter(|e| *e <= bytes.len())
            .ok_or_else(|| DcpError::Corrupt {
                file: VECTORS_FILE.into(),
                line: 0,
                message: format!("truncated record at byte {pos}"),
            })?;
        let s = &bytes[*pos..end];
        *pos = end;
        Ok(s)
    };
    while pos < bytes.len() {
        let id_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4 bytes")) as usize;
        let id = std::str::from_utf8(take(&mut pos, id_len)?)
            .map_err(|e| corrupt(e.to_string()))?
            .to_string();
        let dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4 bytes")) as usize;
        let raw = take(&mut pos, dim * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.insert(id, EmbeddingVector::from_normalized(values));
    }
    Ok(out)
}

impl DcpRepository {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a repository directory and replays its log.
    pub fn open(dir: &Path) -> Result<Self, DcpError> {
        std::fs::create_dir_all(dir).map_err(|e| DcpError::io(dir, e))?;
        let events_path = dir.join(EVENTS_FILE);
        let vectors_path = dir.join(VECTORS_FILE);
        let vectors = match std::fs::read(&vectors_path) {
            Ok(bytes) => read_vector_file(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(DcpError::io(&vectors_path, e)),
        };
        let text = match std::fs::read_to_string(&events_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(DcpError::io(&events_path, e)),
        };
        let mut repo = Self::in_memory();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: StoreEvent = serde_json::from_str(line).map_err(|e| DcpError::Corrupt {
                file: EVENTS_FILE.into(),
                line: i + 1,
                message: e.to_string(),
            })?;
            repo.apply(event, &vectors).map_err(|e| match e {
                DcpError::Corrupt { message, .. } => DcpError::Corrupt {
                    file: EVENTS_FILE.into(),
                    line: i + 1,
                    message,
                },
                other => other,
            })?;
        }
        repo.dir = Some(dir.to_path_buf());
        Ok(repo)
    }

    fn apply(&mut self, event: StoreEvent, vectors: &BTreeMap<String, EmbeddingVector>) -> Result<(), DcpError> {
        let corrupt = |message: String| DcpError::Corrupt {
            file: EVENTS_FILE.into(),
            line: 0,
            message,
        };
        match event {
            StoreEvent::Insert { encoder_tag, dcp } => {
                if dcp.exposure_index != self.dcps.len() + 1 {
                    return Err(corrupt(format!(
                        "exposure index {} out of sequence (expected {})",
                        dcp.exposure_index,
                        self.dcps.len() + 1
                    )));
                }
                let v = vectors
                    .get(&dcp.id)
                    .cloned()
                    .ok_or_else(|| corrupt(format!("no vector stored for {}", dcp.id)))?;
                self.push(encoder_tag, dcp, v)
            }
            StoreEvent::Retract { id, reason, .. } => {
                let idx = *self
                    .by_id
                    .get(&id)
                    .ok_or_else(|| corrupt(format!("retract of unknown id {id}")))?;
                let d = &mut self.dcps[idx];
                d.retracted = true;
                d.retraction_reasons.push(reason);
                Ok(())
            }
            StoreEvent::Skip {
                encounter_id,
                reason,
                at,
            } => {
                self.processed.push((encounter_id.clone(), false));
                self.skips.push(SkipRecord {
                    encounter_id,
                    reason,
                    at,
                });
                Ok(())
            }
        }
    }

    fn check_push(&self, encoder_tag: &str, dcp: &Dcp, vector: &EmbeddingVector) -> Result<(), DcpError> {
        if let Some(t) = &self.encoder_tag {
            if t != encoder_tag {
                return Err(DcpError::EncoderMismatch {
                    repository: t.clone(),
                    given: encoder_tag.to_string(),
                });
            }
        }
        if let Some(d) = self.dimension {
            if d != vector.dimension() {
                return Err(DcpError::Dimension {
                    expected: d,
                    got: vector.dimension(),
                });
            }
        }
        if self.by_id.contains_key(&dcp.id) {
            return Err(DcpError::Corrupt {
                file: EVENTS_FILE.into(),
                line: 0,
                message: format!("duplicate id {}", dcp.id),
            });
        }
        Ok(())
    }

    fn push(&mut self, encoder_tag: String, dcp: Dcp, vector: EmbeddingVector) -> Result<(), DcpError> {
        self.check_push(&encoder_tag, &dcp, &vector)?;
        self.encoder_tag.get_or_insert(encoder_tag);
        self.dimension.get_or_insert(vector.dimension());
        self.by_id.insert(dcp.id.clone(), self.dcps.len());
        self.processed.push((dcp.source_encounter_id.clone(), true));
        self.dcps.push(dcp);
        self.vectors.push(vector);
        Ok(())
    }

    fn append_event(&self, event: &StoreEvent) -> Result<(), DcpError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(EVENTS_FILE);
        let mut line = serde_json::to_string(event).expect("store events serialize");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| DcpError::io(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| DcpError::io(&path, e))?;
        f.sync_data().map_err(|e| DcpError::io(&path, e))
    }

    fn append_vector(&self, id: &str, v: &EmbeddingVector) -> Result<(), DcpError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(VECTORS_FILE);
        let mut buf = Vec::new();
        write_vector_record(&mut buf, id, v);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| DcpError::io(&path, e))?;
        f.write_all(&buf).map_err(|e| DcpError::io(&path, e))?;
        f.sync_data().map_err(|e| DcpError::io(&path, e))
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn encoder_tag(&self) -> Option<&str> {
        self.encoder_tag.as_deref()
    }

    pub fn len(&self) -> usize {
        self.dcps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dcps.is_empty()
    }

    pub fn dcps(&self) -> &[Dcp] {
        &self.dcps
    }

    pub fn skips(&self) -> &[SkipRecord] {
        &self.skips
    }

    pub fn get(&self, id: &str) -> Option<&Dcp> {
        self.by_id.get(id).map(|i| &self.dcps[*i])
    }

    pub fn vector(&self, id: &str) -> Option<&EmbeddingVector> {
        self.by_id.get(id).map(|i| &self.vectors[*i])
    }

    /// Accrual encounter ids already handled, inserted or skipped.
    pub fn processed_encounters(&self) -> impl Iterator<Item = &str> {
        self.processed.iter().map(|(id, _)| id.as_str())
    }

    /// Encounters processed up to and including the insertion with exposure
    /// index `k` (all processed encounters when `k` equals the size).
    pub fn encounters_seen(&self, k: usize) -> usize {
        if k >= self.dcps.len() {
            return self.processed.len();
        }
        let mut inserted = 0;
        for (i, (_, produced)) in self.processed.iter().enumerate() {
            if *produced {
                inserted += 1;
                if inserted == k + 1 {
                    return i;
                }
            }
        }
        self.processed.len()
    }

    pub fn insert(&mut self, new: NewDcp, encoder_tag: &str, vector: EmbeddingVector) -> Result<&Dcp, DcpError> {
        for (name, value) in [
            ("pattern", &new.fields.pattern),
            ("ordering", &new.fields.ordering),
            ("decision", &new.fields.decision),
        ] {
            if value.trim().is_empty() {
                return Err(DcpError::EmptyField(name));
            }
        }
        if (vector.norm() - 1.0).abs() > 1e-4 {
            return Err(DcpError::NotNormalized);
        }
        let exposure_index = self.dcps.len() + 1;
        let dcp = Dcp {
            id: dcp_id(exposure_index),
            pattern: new.fields.pattern.trim().to_string(),
            ordering: new.fields.ordering.trim().to_string(),
            decision: new.fields.decision.trim().to_string(),
            exposure_index,
            pathology: new.pathology,
            source_correct: new.source_correct,
            source_encounter_id: new.source_encounter_id,
            created_at: new.created_at,
            retracted: false,
            retraction_reasons: Vec::new(),
        };
        let event = StoreEvent::Insert {
            encoder_tag: encoder_tag.to_string(),
            dcp: dcp.clone(),
        };
        let id = dcp.id.clone();
        self.check_push(encoder_tag, &dcp, &vector)?;
        self.append_vector(&id, &vector)?;
        self.append_event(&event)?;
        self.push(encoder_tag.to_string(), dcp, vector)?;
        Ok(self.get(&id).expect("just inserted"))
    }

    pub fn record_skip(&mut self, encounter_id: &str, reason: &str, at: DateTime<Utc>) -> Result<(), DcpError> {
        let event = StoreEvent::Skip {
            encounter_id: encounter_id.to_string(),
            reason: reason.to_string(),
            at,
        };
        self.append_event(&event)?;
        self.apply(event, &BTreeMap::new())
    }

    /// Soft retraction. Retracting twice keeps the record retracted and
    /// appends the new reason.
    pub fn retract(&mut self, id: &str, reason: &str, at: DateTime<Utc>) -> Result<&Dcp, DcpError> {
        if !self.by_id.contains_key(id) {
            return Err(DcpError::NotFound(id.to_string()));
        }
        let event = StoreEvent::Retract {
            id: id.to_string(),
            reason: reason.to_string(),
            at,
        };
        self.append_event(&event)?;
        self.apply(event, &BTreeMap::new())?;
        Ok(self.get(id).expect("exists"))
    }

    pub fn list(&self, filter: &DcpFilter) -> Vec<&Dcp> {
        self.dcps.iter().filter(|d| filter.matches(d)).collect()
    }

    /// Immutable view of the first `k` DCPs by exposure index.
    pub fn snapshot_at(&self, k: usize) -> Result<DcpSnapshot, DcpError> {
        if k > self.dcps.len() {
            return Err(DcpError::Range {
                k,
                size: self.dcps.len(),
            });
        }
        DcpSnapshot::build(
            self.encoder_tag.clone(),
            self.dimension,
            &self.dcps[..k],
            &self.vectors[..k],
            self.encounters_seen(k),
        )
    }

    pub fn snapshot(&self) -> DcpSnapshot {
        self.snapshot_at(self.dcps.len()).expect("full snapshot in range")
    }
}
