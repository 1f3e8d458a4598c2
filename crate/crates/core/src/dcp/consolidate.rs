use chrono::{DateTime, Utc};

use super::store::{Dcp, DcpRepository, NewDcp};
use super::DcpError;
use crate::encounter::EncounterRecord;
use crate::gateway::{AuditLog, Embedder, Gateway, GenerationParams, Purpose};
use crate::protocol::{
    parse_dcp, render_consolidation_prompt, ConsolidationInput, HistoryItem, ModelProfile, StepKind,
};
use crate::runner::EpisodeResult;

#[derive(Debug, Clone, PartialEq)]
pub enum ConsolidationOutcome {
    Inserted(Dcp),
    /// The generation never parsed; the skip is logged in the repository.
    Skipped {
        reason: String,
    },
}

/// Turns finished accrual episodes into stored DCPs.
pub struct Consolidator<'a> {
    pub gateway: &'a Gateway,
    pub embedder: &'a Embedder,
    pub profile: &'a ModelProfile,
    pub params: &'a GenerationParams,
}

impl Consolidator<'_> {
    /// Renders the consolidation prompt, parses the three fields (one retry
    /// on a parse failure), embeds the pattern and appends the DCP. Backend
    /// and embedding failures are returned as errors and leave the
    /// repository unchanged.
    pub fn consolidate(
        &self,
        repo: &mut DcpRepository,
        result: &EpisodeResult,
        record: &EncounterRecord,
        feedback: &str,
        audit: &mut AuditLog,
        at: DateTime<Utc>,
    ) -> Result<ConsolidationOutcome, DcpError> {
        let steps: Vec<HistoryItem<'_>> = result
            .trajectory
            .iter()
            .filter(|e| matches!(e.step.kind, StepKind::ActionStep { .. }))
            .map(|e| HistoryItem {
                step: &e.step,
                observation: &e.observation,
            })
            .collect();
        let input = ConsolidationInput {
            patient_input: &record.presenting_complaint,
            steps,
            final_diagnosis: result.final_diagnosis.as_deref(),
            ground_truth: &record.ground_truth,
            correct: result.correct,
            feedback,
            clinician_orders: &record.clinician_orders,
        };
        let bundle = render_consolidation_prompt(&input, self.profile);

        let mut last_error = None;
        let mut fields = None;
        for _ in 0..2 {
            let raw = self
                .gateway
                .generate(&bundle, self.params, Purpose::Consolidation, audit)?;
            match parse_dcp(&raw) {
                Ok(f) => {
                    fields = Some(f);
                    break;
                }
                Err(e) => last_error = Some(e),
            }
        }
        let Some(fields) = fields else {
            let reason = last_error.map(|e| e.to_string()).unwrap_or_default();
            tracing::warn!(encounter = %record.id, %reason, "consolidation skipped");
            repo.record_skip(&record.id, &reason, at)?;
            return Ok(ConsolidationOutcome::Skipped { reason });
        };

        let vector = self.embedder.embed_one(&fields.pattern)?;
        let dcp = repo.insert(
            NewDcp {
                fields,
                pathology: record.pathology.clone(),
                source_correct: result.correct,
                source_encounter_id: record.id.clone(),
                created_at: at,
            },
            &self.embedder.tag(),
            vector,
        )?;
        Ok(ConsolidationOutcome::Inserted(dcp.clone()))
    }
}
