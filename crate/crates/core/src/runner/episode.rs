use super::compaction::compact_history;
use super::{
    Compliance, EpisodeConfig, EpisodeResult, EpisodeStatus, Regime, RunnerError, TrajectoryEntry,
    EXPERIENCE_CAP_REACHED, TOOL_UNAVAILABLE,
};
use crate::dcp::{render_experience, DcpSnapshot, RetrievalEvent, RetrievedRef, NO_EXPERIENCE};
use crate::encounter::{begin_encounter, full_record_view, EncounterRecord, EncounterSession, Vocabulary};
use crate::feedback::{RulePack, RulePackSet};
use crate::gateway::{AuditLog, AuditRecord, Embedder, Gateway, GatewayError, Purpose};
use crate::knowledge::{GuidelineSearcher, PubMedClient};
use crate::protocol::templates::{corrective_observation, full_information_corrective};
use crate::protocol::{
    parse_agent_step, render_diagnostic_prompt, render_full_information_prompt, validate_action, AgentStep,
    HistoryItem, ModelProfile, StepKind, ValidatedAction,
};

/// Everything an episode can call out to. Optional tools must be present
/// exactly when the config enables them.
#[derive(Clone, Copy)]
pub struct Tools<'a> {
    pub vocab: &'a Vocabulary,
    pub profile: &'a ModelProfile,
    pub rule_packs: &'a RulePackSet,
    pub experience: Option<&'a DcpSnapshot>,
    pub embedder: Option<&'a Embedder>,
    pub guidelines: Option<&'a GuidelineSearcher>,
    pub pubmed: Option<&'a PubMedClient>,
}

impl Tools<'_> {
    fn check(&self, config: &EpisodeConfig) -> Result<(), RunnerError> {
        let pairs = [
            ("experience snapshot", config.dcp_enabled, self.experience.is_some()),
            ("embedder", config.dcp_enabled, self.embedder.is_some()),
            (
                "guideline searcher",
                config.guidelines_enabled,
                self.guidelines.is_some(),
            ),
            ("PubMed client", config.pubmed_enabled, self.pubmed.is_some()),
        ];
        for (name, enabled, present) in pairs {
            if enabled && !present {
                return Err(RunnerError::Config(format!("{name} is enabled but not provided")));
            }
        }
        if let (true, Some(snap)) = (config.dcp_enabled, self.experience) {
            if let Some(limit) = config.snapshot_limit {
                if snap.limit() > limit {
                    return Err(RunnerError::Config(format!(
                        "snapshot holds {} DCPs but snapshot_limit is {limit}",
                        snap.limit()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Why a generated step cannot be executed, or the executable action.
enum Checked {
    Final(String),
    Action(ValidatedAction),
    Invalid(String),
}

fn check_step(step: &AgentStep, vocab: &Vocabulary) -> Checked {
    match &step.kind {
        StepKind::FinalStep { diagnosis } => Checked::Final(diagnosis.clone()),
        StepKind::ActionStep { .. } => match validate_action(step, &vocab.imaging) {
            Ok(a) => Checked::Action(a),
            Err(e) => Checked::Invalid(e.to_string()),
        },
        StepKind::Malformed => Checked::Invalid(if step.parse_notes.is_empty() {
            "output does not follow the required format".to_string()
        } else {
            step.parse_notes.join("; ")
        }),
    }
}

fn history(entries: &[TrajectoryEntry]) -> Vec<HistoryItem<'_>> {
    entries
        .iter()
        .map(|e| HistoryItem {
            step: &e.step,
            observation: &e.context_observation,
        })
        .collect()
}

struct Episode<'a> {
    record: &'a EncounterRecord,
    config: &'a EpisodeConfig,
    tools: Tools<'a>,
    gateway: &'a Gateway,
    session: EncounterSession<'a>,
    trajectory: Vec<TrajectoryEntry>,
    audit: AuditLog,
    retrieval_events: Vec<RetrievalEvent>,
    compliance: Compliance,
    experience_searches: usize,
    repairs: usize,
}

impl<'a> Episode<'a> {
    fn generate(&mut self, extra: Option<(&AgentStep, &str)>, purpose: Purpose) -> Result<AgentStep, GatewayError> {
        let mut items = history(&self.trajectory);
        if let Some((step, obs)) = extra {
            items.push(HistoryItem { step, observation: obs });
        }
        let bundle = render_diagnostic_prompt(self.session.initial_context(), &items, self.tools.profile);
        let raw = self
            .gateway
            .generate(&bundle, &self.config.generation, purpose, &mut self.audit)?;
        Ok(parse_agent_step(&raw))
    }

    fn dispatch(&mut self, step_index: usize, action: &ValidatedAction) -> String {
        match action {
            ValidatedAction::PhysicalExamination => {
                self.compliance.physical_exam = true;
                self.session.request_physical_exam(step_index)
            }
            ValidatedAction::LaboratoryTests { lab_names } => {
                self.compliance.laboratory = true;
                self.session.request_lab_tests(step_index, lab_names)
            }
            ValidatedAction::Imaging { region, modality } => {
                self.compliance.imaging = true;
                self.session.request_imaging(step_index, region, modality)
            }
            ValidatedAction::ExperienceSearch { query } => {
                self.compliance.experience_search = true;
                self.experience_search(step_index, query)
            }
            ValidatedAction::GuidelineSearch { query } => {
                self.compliance.guideline_search = true;
                match (self.config.guidelines_enabled, self.tools.guidelines) {
                    (true, Some(g)) => g.search(query),
                    _ => TOOL_UNAVAILABLE.to_string(),
                }
            }
            ValidatedAction::PubMedSearch { query } => match (self.config.pubmed_enabled, self.tools.pubmed) {
                (true, Some(p)) => {
                    let (obs, detail) = p.observe(query);
                    if let Some(detail) = detail {
                        self.audit.push(AuditRecord::ToolError {
                            tool: "PubMed Search".into(),
                            detail,
                        });
                    }
                    obs
                }
                _ => TOOL_UNAVAILABLE.to_string(),
            },
        }
    }

    fn experience_search(&mut self, step_index: usize, query: &str) -> String {
        let (true, Some(snapshot), Some(embedder)) =
            (self.config.dcp_enabled, self.tools.experience, self.tools.embedder)
        else {
            return TOOL_UNAVAILABLE.to_string();
        };
        if self.experience_searches >= self.config.experience_search_cap {
            return EXPERIENCE_CAP_REACHED.to_string();
        }
        self.experience_searches += 1;
        let hits = match snapshot.retrieve(embedder, query, self.config.dcp_k, self.config.dcp_floor) {
            Ok(h) => h,
            Err(e) => {
                self.audit.push(AuditRecord::ToolError {
                    tool: "Experience Search".into(),
                    detail: e.to_string(),
                });
                Vec::new()
            }
        };
        self.retrieval_events.push(RetrievalEvent {
            encounter_id: self.record.id.clone(),
            step_index,
            query: query.to_string(),
            returned: hits
                .iter()
                .map(|h| RetrievedRef {
                    dcp_id: h.dcp.id.clone(),
                    similarity: h.similarity,
                })
                .collect(),
        });
        if hits.is_empty() {
            NO_EXPERIENCE.to_string()
        } else {
            render_experience(&hits)
        }
    }

    fn finish(
        self,
        status: EpisodeStatus,
        final_diagnosis: Option<String>,
        pack: &RulePack,
        failure: Option<String>,
    ) -> EpisodeResult {
        let correct =
            status == EpisodeStatus::Diagnosed && final_diagnosis.as_deref().is_some_and(|d| pack.matches_diagnosis(d));
        let workup_trace = self.session.request_log().iter().map(|(_, a)| a.clone()).collect();
        EpisodeResult {
            encounter_id: self.record.id.clone(),
            regime: Regime::Interactive,
            steps_used: self.trajectory.len(),
            trajectory: self.trajectory,
            final_diagnosis,
            status,
            correct,
            repairs: self.repairs,
            retrieval_events: self.retrieval_events,
            workup_trace,
            compliance: self.compliance,
            failure,
            audit: self.audit,
        }
    }
}

/// Runs the interactive loop until a final diagnosis, the step cap, or a
/// backend failure. Each step slot allows one repair generation after an
/// unusable output; repairs do not count as steps.
pub fn run_episode(
    record: &EncounterRecord,
    config: &EpisodeConfig,
    tools: Tools<'_>,
    gateway: &Gateway,
) -> Result<EpisodeResult, RunnerError> {
    config.validate()?;
    tools.check(config)?;
    let pack = tools.rule_packs.get(&record.pathology)?;
    let mut ep = Episode {
        record,
        config,
        tools,
        gateway,
        session: begin_encounter(record, tools.vocab),
        trajectory: Vec::new(),
        audit: AuditLog::new(),
        retrieval_events: Vec::new(),
        compliance: Compliance::default(),
        experience_searches: 0,
        repairs: 0,
    };

    for step_index in 1..=config.max_steps {
        compact_history(
            &mut ep.trajectory,
            config.compaction_threshold_chars,
            gateway,
            tools.profile,
            &config.generation,
            &mut ep.audit,
        );

        let step = match ep.generate(None, Purpose::Step) {
            Ok(s) => s,
            Err(e) => return Ok(ep.finish(EpisodeStatus::BackendFailure, None, pack, Some(e.to_string()))),
        };
        let (step, checked, repaired) = match check_step(&step, tools.vocab) {
            Checked::Invalid(reason) => {
                ep.repairs += 1;
                ep.audit.push(AuditRecord::Repair {
                    step_index,
                    reason: reason.clone(),
                });
                let corrective = corrective_observation(&reason);
                let retry = match ep.generate(Some((&step, &corrective)), Purpose::Repair) {
                    Ok(s) => s,
                    Err(e) => return Ok(ep.finish(EpisodeStatus::BackendFailure, None, pack, Some(e.to_string()))),
                };
                let checked = check_step(&retry, tools.vocab);
                (retry, checked, true)
            }
            other => (step, other, false),
        };

        match checked {
            Checked::Final(diagnosis) => {
                ep.trajectory.push(TrajectoryEntry {
                    step_index,
                    step,
                    action: None,
                    observation: String::new(),
                    context_observation: String::new(),
                    compacted: false,
                    repaired,
                });
                return Ok(ep.finish(EpisodeStatus::Diagnosed, Some(diagnosis), pack, None));
            }
            Checked::Action(action) => {
                let observation = ep.dispatch(step_index, &action);
                ep.trajectory.push(TrajectoryEntry {
                    step_index,
                    step,
                    action: Some(action),
                    context_observation: observation.clone(),
                    observation,
                    compacted: false,
                    repaired,
                });
            }
            Checked::Invalid(reason) => {
                let observation = corrective_observation(&reason);
                ep.trajectory.push(TrajectoryEntry {
                    step_index,
                    step,
                    action: None,
                    context_observation: observation.clone(),
                    observation,
                    compacted: false,
                    repaired,
                });
            }
        }
    }
    Ok(ep.finish(EpisodeStatus::StepCapReached, None, pack, None))
}

/// Single generation over the complete record with evidence requests
/// disabled. An action or malformed output gets one repair; if that also
/// fails the status is `NoValidDiagnosis`.
pub fn run_full_information(
    record: &EncounterRecord,
    config: &EpisodeConfig,
    profile: &ModelProfile,
    rule_packs: &RulePackSet,
    gateway: &Gateway,
) -> Result<EpisodeResult, RunnerError> {
    config.validate()?;
    let pack = rule_packs.get(&record.pathology)?;
    let view = full_record_view(record);
    let mut audit = AuditLog::new();
    let mut repairs = 0;

    let first = |audit: &mut AuditLog, extra: Option<(&AgentStep, &str)>, purpose| {
        let items: Vec<HistoryItem<'_>> = extra
            .map(|(step, observation)| HistoryItem { step, observation })
            .into_iter()
            .collect();
        let bundle = render_full_information_prompt(&view, &items, profile);
        gateway
            .generate(&bundle, &config.generation, purpose, audit)
            .map(|raw| parse_agent_step(&raw))
    };

    let mut outcome = first(&mut audit, None, Purpose::FullInformation);
    let mut repaired = false;
    if let Ok(step) = &outcome {
        if !step.is_final() {
            let reason = match &step.kind {
                StepKind::ActionStep { .. } => "evidence requests are not available".to_string(),
                _ => step.parse_notes.join("; "),
            };
            repairs += 1;
            audit.push(AuditRecord::Repair {
                step_index: 1,
                reason: reason.clone(),
            });
            let corrective = full_information_corrective(&reason);
            let step = step.clone();
            outcome = first(&mut audit, Some((&step, &corrective)), Purpose::Repair);
            repaired = true;
        }
    }

    let (status, step, failure) = match outcome {
        Err(e) => (EpisodeStatus::BackendFailure, None, Some(e.to_string())),
        Ok(step) if step.is_final() => (EpisodeStatus::Diagnosed, Some(step), None),
        Ok(step) => (EpisodeStatus::NoValidDiagnosis, Some(step), None),
    };
    let final_diagnosis = match (&status, &step) {
        (EpisodeStatus::Diagnosed, Some(s)) => s.diagnosis().map(str::to_string),
        _ => None,
    };
    let correct = final_diagnosis.as_deref().is_some_and(|d| pack.matches_diagnosis(d));
    let trajectory = step
        .map(|step| {
            vec![TrajectoryEntry {
                step_index: 1,
                step,
                action: None,
                observation: String::new(),
                context_observation: String::new(),
                compacted: false,
                repaired,
            }]
        })
        .unwrap_or_default();
    Ok(EpisodeResult {
        encounter_id: record.id.clone(),
        regime: Regime::FullInformation,
        trajectory,
        final_diagnosis,
        status,
        correct,
        steps_used: 1,
        repairs,
        retrieval_events: Vec::new(),
        workup_trace: Vec::new(),
        compliance: Compliance::default(),
        failure,
        audit,
    })
}
