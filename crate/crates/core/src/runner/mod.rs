//! Diagnostic episodes: the interactive loop and the full-information
//! single pass.

mod compaction;
mod episode;

use serde::{Deserialize, Serialize};

pub use compaction::{compact_history, head_tail_truncate, COMPACTION_FALLBACK_CHARS};
pub use episode::{run_episode, run_full_information, Tools};

use crate::dcp::RetrievalEvent;
use crate::encounter::WorkupAction;
use crate::feedback::FeedbackError;
use crate::gateway::{AuditLog, GenerationParams};
use crate::protocol::{AgentStep, ValidatedAction};

pub const TOOL_UNAVAILABLE: &str = "This tool is not available in this configuration.";
pub const EXPERIENCE_CAP_REACHED: &str = "Experience search limit reached.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub generation: GenerationParams,
    pub dcp_enabled: bool,
    pub guidelines_enabled: bool,
    pub pubmed_enabled: bool,
    pub experience_search_cap: usize,
    /// Rendered scratchpad size above which older observations are compacted.
    pub compaction_threshold_chars: usize,
    pub snapshot_limit: Option<usize>,
    pub dcp_k: usize,
    pub dcp_floor: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 20,
            generation: GenerationParams::default(),
            dcp_enabled: true,
            guidelines_enabled: true,
            pubmed_enabled: true,
            experience_search_cap: 2,
            compaction_threshold_chars: 24_000,
            snapshot_limit: None,
            dcp_k: 3,
            dcp_floor: 0.2,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: &str| Err(RunnerError::Config(m.to_string()));
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.experience_search_cap == 0 {
            return bad("experience_search_cap must be at least 1");
        }
        if self.compaction_threshold_chars == 0 {
            return bad("compaction_threshold_chars must be positive");
        }
        if self.dcp_k == 0 {
            return bad("dcp_k must be at least 1");
        }
        if !(-1.0..=1.0).contains(&self.dcp_floor) {
            return bad("dcp_floor must be within [-1, 1]");
        }
        self.generation
            .validate()
            .map_err(|e| RunnerError::Config(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("episode configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Interactive,
    FullInformation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Diagnosed,
    StepCapReached,
    BackendFailure,
    /// Full-information run that produced no usable final diagnosis.
    NoValidDiagnosis,
}

/// Which of the template's mandatory actions the model issued.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Compliance {
    pub physical_exam: bool,
    pub laboratory: bool,
    pub imaging: bool,
    pub experience_search: bool,
    pub guideline_search: bool,
}

impl Compliance {
    pub fn all(&self) -> bool {
        self.physical_exam && self.laboratory && self.imaging && self.experience_search && self.guideline_search
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub step_index: usize,
    pub step: AgentStep,
    pub action: Option<ValidatedAction>,
    /// Full observation returned for this step.
    pub observation: String,
    /// Observation as currently shown to the model; differs from
    /// `observation` once compacted.
    pub context_observation: String,
    #[serde(default)]
    pub compacted: bool,
    /// The step came from a repair generation.
    #[serde(default)]
    pub repaired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub encounter_id: String,
    pub regime: Regime,
    pub trajectory: Vec<TrajectoryEntry>,
    pub final_diagnosis: Option<String>,
    pub status: EpisodeStatus,
    pub correct: bool,
    pub steps_used: usize,
    pub repairs: usize,
    pub retrieval_events: Vec<RetrievalEvent>,
    pub workup_trace: Vec<WorkupAction>,
    pub compliance: Compliance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip)]
    pub audit: AuditLog,
}
