use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::parse::{escape_value, render_step, AgentStep, StepKind, OBSERVATION};
use super::templates::{
    BEGIN_MARKER, COMPACTION_SYSTEM, CONSOLIDATION_TEMPLATE, DIAGNOSTIC_SYSTEM, FULL_INFORMATION_SYSTEM,
};
use crate::encounter::WorkupAction;

const BUILTIN_PROFILES: &str = include_str!("../../assets/model_profiles.json");

const TAGS: [&str; 5] = [
    "system_tag_start",
    "system_tag_end",
    "user_tag_start",
    "user_tag_end",
    "ai_tag_start",
];

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("reading model profiles {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model profiles: {0}")]
    Format(String),
    #[error("model profile `{profile}` is missing delimiter `{tag}`")]
    MissingDelimiter { profile: String, tag: String },
    #[error("unknown model profile `{0}`")]
    Unknown(String),
}

/// Chat delimiters substituted for the five template tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub system_tag_start: String,
    pub system_tag_end: String,
    pub user_tag_start: String,
    pub user_tag_end: String,
    pub ai_tag_start: String,
}

#[derive(Debug, Clone)]
pub struct ModelProfiles {
    profiles: BTreeMap<String, ModelProfile>,
}

impl ModelProfiles {
    pub fn builtin() -> Self {
        Self::parse_json(BUILTIN_PROFILES).expect("builtin model profiles are valid")
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_json(&text)
    }

    /// Parses `{ "<profile>": { "<tag>": "<delimiter>", ... }, ... }`; every
    /// profile must define all five tags.
    pub fn parse_json(text: &str) -> Result<Self, ProfileError> {
        let root: Value = serde_json::from_str(text).map_err(|e| ProfileError::Format(e.to_string()))?;
        let root = root
            .as_object()
            .ok_or_else(|| ProfileError::Format("expected an object of profiles".into()))?;
        let mut profiles = BTreeMap::new();
        for (name, body) in root {
            let body = body
                .as_object()
                .ok_or_else(|| ProfileError::Format(format!("profile `{name}` must be an object")))?;
            let mut tags = Vec::with_capacity(5);
            for tag in TAGS {
                match body.get(tag).and_then(Value::as_str) {
                    Some(v) => tags.push(v.to_string()),
                    None => {
                        return Err(ProfileError::MissingDelimiter {
                            profile: name.clone(),
                            tag: tag.to_string(),
                        })
                    }
                }
            }
            let mut tags = tags.into_iter();
            let mut next = || tags.next().unwrap_or_default();
            profiles.insert(
                name.clone(),
                ModelProfile {
                    name: name.clone(),
                    system_tag_start: next(),
                    system_tag_end: next(),
                    user_tag_start: next(),
                    user_tag_end: next(),
                    ai_tag_start: next(),
                },
            );
        }
        Ok(Self { profiles })
    }

    pub fn get(&self, name: &str) -> Result<&ModelProfile, ProfileError> {
        self.profiles
            .get(name)
            .ok_or_else(|| ProfileError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }
}

/// A fully rendered prompt. `prompt` is the flattened text with delimiters;
/// the other fields keep the parts separately for chat-style backends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub scratchpad: String,
    pub stop_sequences: Vec<String>,
    pub prompt: String,
}

impl PromptBundle {
    /// Hex SHA-256 of the flattened prompt.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.prompt.as_bytes()))
    }
}

/// A prior step and the observation text to show for it.
#[derive(Debug, Clone, Copy)]
pub struct HistoryItem<'a> {
    pub step: &'a AgentStep,
    pub observation: &'a str,
}

pub fn render_scratchpad(history: &[HistoryItem<'_>]) -> String {
    history.iter().map(|h| render_step(h.step, h.observation)).collect()
}

fn flatten_chat(profile: &ModelProfile, system: &str, user: &str, assistant_prefix: &str) -> String {
    format!(
        "{}{}\n{}{}\n\n{}\n{}{}\n{}",
        profile.system_tag_start,
        system,
        profile.system_tag_end,
        profile.user_tag_start,
        user,
        profile.user_tag_end,
        profile.ai_tag_start,
        assistant_prefix,
    )
}

pub fn render_diagnostic_prompt(
    record_context: &str,
    history: &[HistoryItem<'_>],
    profile: &ModelProfile,
) -> PromptBundle {
    let user_text = format!("Patient History:\n{}\n\n{BEGIN_MARKER}", record_context.trim());
    let scratchpad = render_scratchpad(history);
    let prompt = flatten_chat(profile, DIAGNOSTIC_SYSTEM, &user_text, &format!("{scratchpad}Thought:"));
    PromptBundle {
        system_text: DIAGNOSTIC_SYSTEM.to_string(),
        user_text,
        scratchpad,
        stop_sequences: vec![OBSERVATION.to_string()],
        prompt,
    }
}

/// Single-pass prompt over the complete record; `history` carries at most a
/// rejected attempt and its corrective observation.
pub fn render_full_information_prompt(
    full_record: &str,
    history: &[HistoryItem<'_>],
    profile: &ModelProfile,
) -> PromptBundle {
    let user_text = format!("{}\n\n{BEGIN_MARKER}", full_record.trim());
    let scratchpad = render_scratchpad(history);
    let prompt = flatten_chat(
        profile,
        FULL_INFORMATION_SYSTEM,
        &user_text,
        &format!("{scratchpad}Thought:"),
    );
    PromptBundle {
        system_text: FULL_INFORMATION_SYSTEM.to_string(),
        user_text,
        scratchpad,
        stop_sequences: vec![OBSERVATION.to_string()],
        prompt,
    }
}

/// Inputs for the experience-construction prompt.
#[derive(Debug, Clone)]
pub struct ConsolidationInput<'a> {
    pub patient_input: &'a str,
    pub steps: Vec<HistoryItem<'a>>,
    pub final_diagnosis: Option<&'a str>,
    pub ground_truth: &'a str,
    pub correct: bool,
    pub feedback: &'a str,
    pub clinician_orders: &'a [WorkupAction],
}

pub const NO_CLINICIAN_ORDERS: &str = "none recorded";
pub const NO_FINAL_DIAGNOSIS: &str = "No final diagnosis was given.";

/// Chronological tool calls with their observations; final steps are omitted.
pub fn render_intermediate_steps(steps: &[HistoryItem<'_>]) -> String {
    let mut blocks = Vec::new();
    for h in steps {
        let (name, input) = match &h.step.kind {
            StepKind::ActionStep {
                action_name,
                action_input,
            } => (action_name.as_str(), action_input.as_str()),
            StepKind::Malformed => ("(invalid output)", ""),
            StepKind::FinalStep { .. } => continue,
        };
        blocks.push(format!(
            "Step {}:\nAction: {}\nAction Input: {}\nObservation: {}",
            blocks.len() + 1,
            name,
            escape_value(input),
            escape_value(h.observation),
        ));
    }
    if blocks.is_empty() {
        "none".to_string()
    } else {
        blocks.join("\n\n")
    }
}

pub fn render_clinician_orders(orders: &[WorkupAction]) -> String {
    if orders.is_empty() {
        return NO_CLINICIAN_ORDERS.to_string();
    }
    orders
        .iter()
        .map(|o| format!("- {}", o.render_template()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Single-pass `{name}` substitution; unknown placeholders are left as-is.
pub(crate) fn fill(template: &str, vars: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if vars.contains_key(&after[..close]) => {
                out.push_str(&vars[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn render_consolidation_prompt(input: &ConsolidationInput<'_>, profile: &ModelProfile) -> PromptBundle {
    let mut vars = BTreeMap::new();
    vars.insert("input", input.patient_input.trim().to_string());
    vars.insert("intermediate_steps", render_intermediate_steps(&input.steps));
    vars.insert(
        "output",
        input
            .final_diagnosis
            .map(str::trim)
            .filter(|d| !d.is_empty())
            .unwrap_or(NO_FINAL_DIAGNOSIS)
            .to_string(),
    );
    vars.insert("ground_truth", input.ground_truth.trim().to_string());
    vars.insert(
        "correctness",
        if input.correct { "Correct" } else { "Incorrect" }.to_string(),
    );
    vars.insert("message", input.feedback.trim().to_string());
    vars.insert("clinician", render_clinician_orders(input.clinician_orders));
    let system_text = fill(CONSOLIDATION_TEMPLATE, &vars);
    let prompt = format!(
        "{}{}\n{}\n\n{}\n",
        profile.system_tag_start, system_text, profile.system_tag_end, profile.ai_tag_start
    );
    PromptBundle {
        system_text,
        user_text: String::new(),
        scratchpad: String::new(),
        stop_sequences: Vec::new(),
        prompt,
    }
}

pub fn render_compaction_prompt(tool: &str, observation: &str, profile: &ModelProfile) -> PromptBundle {
    let user_text = format!("Tool: {tool}\nOutput:\n{}", observation.trim());
    let prompt = flatten_chat(profile, COMPACTION_SYSTEM, &user_text, "");
    PromptBundle {
        system_text: COMPACTION_SYSTEM.to_string(),
        user_text,
        scratchpad: String::new(),
        stop_sequences: Vec::new(),
        prompt,
    }
}
