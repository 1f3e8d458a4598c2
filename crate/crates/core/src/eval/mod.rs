//! Accuracy, workup consistency and adherence, and the paired analyses
//! over experience-enabled and experience-free runs.

mod analysis;
mod metrics;
mod report;

pub use analysis::{
    check_paired, footprints, improvement_cases, learning_curve, provenance_enrichment, retrieval_usage,
    stratify_by_burden, BurdenSplit, CurvePoint, Footprint, ProvenanceEnrichment, RetrievalUsage,
};
pub use metrics::{
    accuracy, first_types, imaging_adherence_score, imaging_set_f1, lab_adherence_score, lab_set_f1, order_concordance,
    pe_timing_score, set_f1, AdherenceReport, ConsistencyReport,
};
pub use report::{
    analyze, build_report, AnalysisReport, BurdenReport, ComplianceRates, EncounterMetrics, EvaluationReport, RunInfo,
    StratumDelta, WindowUsage, ANALYSIS_FILE, REPORT_FILE,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("result sets differ: only in first {only_first:?}, only in second {only_second:?}")]
    IdMismatch {
        only_first: Vec<String>,
        only_second: Vec<String>,
    },
    #[error("retrieval log references unknown DCP `{0}`")]
    Integrity(String),
    #[error("snapshot k={k} exceeds repository size {size}")]
    Range { k: usize, size: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
