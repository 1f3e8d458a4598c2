//! Encounter records and evidence-gated sessions.

mod record;
mod session;
mod vocab;

pub use record::{
    check_cohort, load_cohort, split_lab_names, CohortCheck, EncounterRecord, ImagingItem, LabGating, LabItem,
    LabelFirewall, RecordError, RecordErrorKind, WorkupAction, WorkupType,
};
pub use session::{
    begin_encounter, full_record_view, lab_unavailable, EncounterSession, EvidenceKey, EMPTY_LAB_REQUEST,
    IMAGING_UNAVAILABLE, LABS_UNAVAILABLE, PHYSICAL_EXAM_UNAVAILABLE,
};
pub use vocab::{CanonMap, ImagingAliases, ImagingKey, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("canonicalization map line {line}: {message}")]
    CanonMap { line: usize, message: String },
    #[error("imaging alias table: {0}")]
    Aliases(String),
}

#[derive(Debug, thiserror::Error)]
pub enum CohortError {
    #[error("reading cohort {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate encounter ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("{} invalid record(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<RecordError>),
}
