use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GenerationParams;

/// What a generation call was for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Step,
    Repair,
    FullInformation,
    Consolidation,
    Compaction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditRecord {
    Generation {
        purpose: Purpose,
        digest: String,
        params: GenerationParams,
        attempts: u32,
        response: String,
        raw_response: String,
    },
    GenerationFailed {
        purpose: Purpose,
        digest: String,
        attempts: u32,
        error: String,
    },
    Repair {
        step_index: usize,
        reason: String,
    },
    Compaction {
        step_index: usize,
        before_digest: String,
        after_digest: String,
        fallback: bool,
    },
    ToolError {
        tool: String,
        detail: String,
    },
}

/// Per-episode audit trail, serialized as newline-delimited JSON.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: AuditRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("audit records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_ndjson().as_bytes())?;
        f.sync_all()
    }
}
