//! Thought/Action/Action Input/Observation step parsing and rendering.

use serde::{Deserialize, Serialize};

pub const THOUGHT: &str = "Thought:";
pub const ACTION: &str = "Action:";
pub const ACTION_INPUT: &str = "Action Input:";
pub const OBSERVATION: &str = "Observation:";
pub const FINAL_DIAGNOSIS: &str = "Final Diagnosis:";

const LABELS: [(&str, Label); 5] = [
    (ACTION_INPUT, Label::ActionInput),
    (ACTION, Label::Action),
    (THOUGHT, Label::Thought),
    (OBSERVATION, Label::Observation),
    (FINAL_DIAGNOSIS, Label::FinalDiagnosis),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Thought,
    Action,
    ActionInput,
    Observation,
    FinalDiagnosis,
}

fn line_label(line: &str) -> Option<(Label, &str)> {
    LABELS
        .iter()
        .find_map(|(text, label)| line.strip_prefix(text).map(|rest| (*label, rest)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum StepKind {
    ActionStep { action_name: String, action_input: String },
    FinalStep { diagnosis: String },
    Malformed,
}

/// One parsed model generation. `raw` keeps the generation verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStep {
    #[serde(flatten)]
    pub kind: StepKind,
    pub thought: String,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parse_notes: Vec<String>,
}

impl AgentStep {
    pub fn action(thought: &str, name: &str, input: &str) -> Self {
        Self {
            kind: StepKind::ActionStep {
                action_name: name.to_string(),
                action_input: input.to_string(),
            },
            thought: thought.to_string(),
            raw: String::new(),
            parse_notes: Vec::new(),
        }
    }

    pub fn final_diagnosis(thought: &str, diagnosis: &str) -> Self {
        Self {
            kind: StepKind::FinalStep {
                diagnosis: diagnosis.to_string(),
            },
            thought: thought.to_string(),
            raw: String::new(),
            parse_notes: Vec::new(),
        }
    }

    pub fn is_final(&self) -> bool {
        matches!(self.kind, StepKind::FinalStep { .. })
    }

    pub fn is_malformed(&self) -> bool {
        matches!(self.kind, StepKind::Malformed)
    }

    pub fn action_name(&self) -> Option<&str> {
        match &self.kind {
            StepKind::ActionStep { action_name, .. } => Some(action_name),
            _ => None,
        }
    }

    pub fn diagnosis(&self) -> Option<&str> {
        match &self.kind {
            StepKind::FinalStep { diagnosis } => Some(diagnosis),
            _ => None,
        }
    }
}

/// Parses one generation into an action step, a final diagnosis, or a
/// malformed value. Never fails.
///
/// Labels are recognized only at the start of a line and are case-sensitive;
/// a value runs until the next label. Text after an `Observation:` label is
/// dropped. Text before the first label is taken as the thought when no
/// `Thought:` label is present, since generations continue a prompt that
/// already ends in `Thought:`.
pub fn parse_agent_step(raw: &str) -> AgentStep {
    let mut notes = Vec::new();
    let mut preamble: Vec<&str> = Vec::new();
    let mut sections: Vec<(Label, Vec<&str>)> = Vec::new();
    let mut lines = raw.lines();
    while let Some(line) = lines.next() {
        match line_label(line) {
            Some((Label::Observation, rest)) => {
                let trailing = rest.trim().len() + lines.map(|l| l.trim().len()).sum::<usize>();
                if trailing > 0 {
                    notes.push("text after Observation label ignored".to_string());
                }
                break;
            }
            Some((label, rest)) => sections.push((label, vec![rest])),
            None => match sections.last_mut() {
                Some((_, body)) => body.push(line),
                None => preamble.push(line),
            },
        }
    }

    let mut first = |wanted: Label, name: &str| -> Option<String> {
        let mut found = sections.iter().filter(|(l, _)| *l == wanted);
        let value = found.next().map(|(_, body)| body.join("\n").trim().to_string());
        if found.next().is_some() {
            notes.push(format!("multiple {name} labels; using the first"));
        }
        value
    };
    let thought = first(Label::Thought, "Thought");
    let action = first(Label::Action, "Action");
    let input = first(Label::ActionInput, "Action Input");
    let diagnosis = first(Label::FinalDiagnosis, "Final Diagnosis");
    let preamble = preamble.join("\n").trim().to_string();

    let thought = match thought {
        Some(t) => {
            if !preamble.is_empty() {
                notes.push("text before Thought label ignored".to_string());
            }
            t
        }
        None => preamble,
    };

    let kind = match (action, diagnosis) {
        (Some(_), Some(_)) => {
            notes.push("both Action and Final Diagnosis present".to_string());
            StepKind::Malformed
        }
        (Some(name), None) if name.is_empty() => {
            notes.push("empty Action".to_string());
            StepKind::Malformed
        }
        (Some(name), None) => {
            if input.is_none() {
                notes.push("missing Action Input label".to_string());
            }
            StepKind::ActionStep {
                action_name: name,
                action_input: input.unwrap_or_default(),
            }
        }
        (None, Some(d)) if d.is_empty() => {
            notes.push("empty Final Diagnosis".to_string());
            StepKind::Malformed
        }
        (None, Some(d)) => StepKind::FinalStep { diagnosis: d },
        (None, None) => {
            notes.push("missing Action label".to_string());
            notes.push("missing Final Diagnosis label".to_string());
            StepKind::Malformed
        }
    };

    AgentStep {
        kind,
        thought,
        raw: raw.to_string(),
        parse_notes: notes,
    }
}

/// Shifts any line that would read as a protocol label by one space so that
/// values never terminate a block early.
pub fn escape_value(text: &str) -> String {
    let trimmed = text.trim();
    let mut out = String::with_capacity(trimmed.len());
    for (i, line) in trimmed.lines().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        if line_label(line).is_some() {
            out.push(' ');
        }
        out.push_str(line);
    }
    out
}

fn labeled(out: &mut String, label: &str, value: &str) {
    out.push_str(label);
    let value = escape_value(value);
    if !value.is_empty() {
        out.push(' ');
        out.push_str(&value);
    }
    out.push('\n');
}

/// Renders a step and its observation as one scratchpad block.
pub fn render_step(step: &AgentStep, observation: &str) -> String {
    let mut out = String::new();
    match &step.kind {
        StepKind::ActionStep {
            action_name,
            action_input,
        } => {
            labeled(&mut out, THOUGHT, &step.thought);
            labeled(&mut out, ACTION, action_name);
            labeled(&mut out, ACTION_INPUT, action_input);
            labeled(&mut out, OBSERVATION, observation);
        }
        StepKind::FinalStep { diagnosis } => {
            labeled(&mut out, THOUGHT, &step.thought);
            labeled(&mut out, FINAL_DIAGNOSIS, diagnosis);
        }
        StepKind::Malformed => {
            // A leading Thought label is dropped so re-rendering does not nest it.
            let raw = step.raw.trim_start();
            let text = if raw.is_empty() {
                &step.thought
            } else {
                raw.strip_prefix(THOUGHT).unwrap_or(raw)
            };
            labeled(&mut out, THOUGHT, text);
            labeled(&mut out, OBSERVATION, observation);
        }
    }
    out
}

/// Renders a sequence of steps in Thought/Action/Action Input/Observation order.
pub fn render_trace<'a, I>(steps: I) -> String
where
    I: IntoIterator<Item = (&'a AgentStep, &'a str)>,
{
    steps.into_iter().map(|(step, obs)| render_step(step, obs)).collect()
}

/// Splits a rendered trace back into steps and their observations.
pub fn parse_trace(text: &str) -> Vec<(AgentStep, Option<String>)> {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    let mut closed = true;
    for line in text.lines() {
        let label = line_label(line).map(|(l, _)| l);
        match label {
            Some(Label::Observation) | Some(Label::FinalDiagnosis) => {
                if blocks.is_empty() {
                    blocks.push(Vec::new());
                }
                closed = true;
            }
            Some(_) if closed => {
                blocks.push(Vec::new());
                closed = false;
            }
            _ => {}
        }
        match blocks.last_mut() {
            Some(block) => block.push(line),
            None => {
                blocks.push(vec![line]);
                closed = false;
            }
        }
    }

    blocks
        .into_iter()
        .map(|lines| {
            let split = lines
                .iter()
                .position(|l| matches!(line_label(l), Some((Label::Observation, _))));
            match split {
                Some(i) => {
                    let step = parse_agent_step(&lines[..i].join("\n"));
                    let obs_lines = &lines[i..];
                    let mut obs = obs_lines.join("\n");
                    obs = obs[OBSERVATION.len()..].trim().to_string();
                    (step, Some(obs))
                }
                None => (parse_agent_step(&lines.join("\n")), None),
            }
        })
        .collect()
}
