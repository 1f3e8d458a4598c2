use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::vocab::{fold_key, Vocabulary};
use super::CohortError;
use crate::protocol::ToolKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabItem {
    pub name: String,
    pub canonical_id: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagingItem {
    pub modality: String,
    pub region: String,
    pub report: String,
}

/// One evaluation action (physical exam, lab panel or imaging study), used for
/// both the agent's executed workup and the chart's documented orders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action")]
pub enum WorkupAction {
    #[serde(rename = "Physical Examination")]
    PhysicalExamination,
    #[serde(rename = "Laboratory Tests")]
    LaboratoryTests { names: Vec<String> },
    #[serde(rename = "Imaging")]
    Imaging { region: String, modality: String },
}

impl WorkupAction {
    pub fn workup_type(&self) -> WorkupType {
        match self {
            WorkupAction::PhysicalExamination => WorkupType::PhysicalExamination,
            WorkupAction::LaboratoryTests { .. } => WorkupType::Laboratory,
            WorkupAction::Imaging { .. } => WorkupType::Imaging,
        }
    }

    /// Renders the action with the copyable tool-input templates.
    pub fn render_template(&self) -> String {
        match self {
            WorkupAction::PhysicalExamination => "Physical Examination".to_string(),
            WorkupAction::LaboratoryTests { names } => {
                format!("Laboratory Tests: {}", names.join(", "))
            }
            WorkupAction::Imaging { region, modality } => {
                format!("Imaging: modality={modality}, region={region}")
            }
        }
    }
}

/// Broad investigation types used for order concordance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WorkupType {
    PhysicalExamination,
    Laboratory,
    Imaging,
}

/// How lab requests are gated for a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabGating {
    /// Each requested test reveals only the matching items.
    #[default]
    PerTest,
    /// Any lab request reveals the whole consolidated results field.
    Consolidated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub id: String,
    pub presenting_complaint: String,
    pub physical_exam: Option<String>,
    pub labs: Vec<LabItem>,
    pub imaging: Vec<ImagingItem>,
    pub ground_truth: String,
    pub pathology: String,
    pub clinician_orders: Vec<WorkupAction>,
    pub language_tag: String,
    #[serde(default)]
    pub lab_gating: LabGating,
}

/// Substring scanner that keeps diagnosis labels out of agent-visible text.
///
/// Terms for a record are its ground-truth label, its pathology tag and any
/// synonyms configured for that pathology; matching is case-insensitive.
#[derive(Debug, Clone, Default)]
pub struct LabelFirewall {
    synonyms: BTreeMap<String, BTreeSet<String>>,
}

impl LabelFirewall {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_synonyms<I, S>(&mut self, pathology: &str, terms: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entry = self.synonyms.entry(fold_key(pathology)).or_default();
        for t in terms {
            let t = fold_key(t.as_ref());
            if !t.is_empty() {
                entry.insert(t);
            }
        }
    }

    pub fn terms_for(&self, record: &EncounterRecord) -> BTreeSet<String> {
        let mut terms = BTreeSet::new();
        for t in [&record.ground_truth, &record.pathology] {
            let t = fold_key(t);
            if !t.is_empty() {
                terms.insert(t);
            }
        }
        if let Some(extra) = self.synonyms.get(&fold_key(&record.pathology)) {
            terms.extend(extra.iter().cloned());
        }
        terms
    }

    /// First label term found in `text`, if any.
    pub fn scan(&self, record: &EncounterRecord, text: &str) -> Option<String> {
        let haystack = fold_key(text);
        self.terms_for(record)
            .into_iter()
            .find(|term| haystack.contains(term.as_str()))
    }

    /// Every agent-visible field of the record that leaks a label term.
    pub fn scan_record(&self, record: &EncounterRecord) -> Vec<(String, String)> {
        let mut leaks = Vec::new();
        let mut check = |field: String, text: &str| {
            if let Some(term) = self.scan(record, text) {
                leaks.push((field, term));
            }
        };
        check("presenting_complaint".into(), &record.presenting_complaint);
        if let Some(pe) = &record.physical_exam {
            check("physical_exam".into(), pe);
        }
        for (i, lab) in record.labs.iter().enumerate() {
            check(format!("labs[{i}]"), &format!("{} {}", lab.name, lab.value));
        }
        for (i, img) in record.imaging.iter().enumerate() {
            check(
                format!("imaging[{i}]"),
                &format!("{} {} {}", img.modality, img.region, img.report),
            );
        }
        leaks
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordErrorKind {
    Schema,
    LabelLeakage,
}

/// A problem with one line of a cohort file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    pub id: Option<String>,
    pub field: String,
    pub kind: RecordErrorKind,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "record `{id}` (line {})", self.line)?,
            None => write!(f, "line {}", self.line)?,
        }
        write!(f, ": field `{}`: {}", self.field, self.message)
    }
}

/// Result of checking a cohort without failing fast.
#[derive(Debug, Default)]
pub struct CohortCheck {
    pub records: Vec<EncounterRecord>,
    pub errors: Vec<RecordError>,
    pub duplicate_ids: Vec<String>,
}

impl CohortCheck {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.duplicate_ids.is_empty()
    }
}

/// Parses and validates every line of a newline-delimited cohort file.
pub fn check_cohort(text: &str, vocab: &Vocabulary, firewall: &LabelFirewall) -> CohortCheck {
    let mut check = CohortCheck::default();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        match parse_record(line, lineno, vocab) {
            Ok(record) => {
                let leaks = firewall.scan_record(&record);
                if !leaks.is_empty() {
                    for (field, term) in leaks {
                        check.errors.push(RecordError {
                            line: lineno,
                            id: Some(record.id.clone()),
                            field,
                            kind: RecordErrorKind::LabelLeakage,
                            message: format!("label leakage (`{term}`)"),
                        });
                    }
                    continue;
                }
                if !seen.insert(record.id.clone()) {
                    check.duplicate_ids.push(record.id.clone());
                    continue;
                }
                check.records.push(record);
            }
            Err(err) => check.errors.push(err),
        }
    }
    check
}

/// Loads a cohort file, failing on any invalid record or duplicate id.
pub fn load_cohort(
    path: &Path,
    vocab: &Vocabulary,
    firewall: &LabelFirewall,
) -> Result<Vec<EncounterRecord>, CohortError> {
    let text = std::fs::read_to_string(path).map_err(|source| CohortError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let check = check_cohort(&text, vocab, firewall);
    if !check.duplicate_ids.is_empty() {
        return Err(CohortError::DuplicateIds(check.duplicate_ids));
    }
    if !check.errors.is_empty() {
        return Err(CohortError::Invalid(check.errors));
    }
    Ok(check.records)
}

fn parse_record(line: &str, lineno: usize, vocab: &Vocabulary) -> Result<EncounterRecord, RecordError> {
    let schema = |id: Option<&str>, field: &str, message: String| RecordError {
        line: lineno,
        id: id.map(str::to_string),
        field: field.to_string(),
        kind: RecordErrorKind::Schema,
        message,
    };
    let value: Value =
        serde_json::from_str(line).map_err(|e| schema(None, "<json>", format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema(None, "<json>", "record must be a JSON object".into()))?;

    let id = required_str(obj, "id").map_err(|m| schema(None, "id", m))?;
    let idr = Some(id.as_str());
    let presenting_complaint =
        required_str(obj, "presenting_complaint").map_err(|m| schema(idr, "presenting_complaint", m))?;
    let pathology = required_str(obj, "pathology").map_err(|m| schema(idr, "pathology", m))?;
    let ground_truth = required_str(obj, "ground_truth").map_err(|m| schema(idr, "ground_truth", m))?;
    let physical_exam = optional_str(obj, "physical_exam").map_err(|m| schema(idr, "physical_exam", m))?;
    let language_tag = optional_str(obj, "language")
        .map_err(|m| schema(idr, "language", m))?
        .unwrap_or_else(|| "en".to_string());

    let mut labs = Vec::new();
    for (i, item) in optional_array(obj, "labs")
        .map_err(|m| schema(idr, "labs", m))?
        .iter()
        .enumerate()
    {
        let field = format!("labs[{i}]");
        let item = item
            .as_object()
            .ok_or_else(|| schema(idr, &field, "expected an object".into()))?;
        let name = required_str(item, "name").map_err(|m| schema(idr, &format!("{field}.name"), m))?;
        let value = required_str(item, "value").map_err(|m| schema(idr, &format!("{field}.value"), m))?;
        labs.push(LabItem {
            canonical_id: vocab.canon.canonical(&name),
            name,
            value,
        });
    }

    let mut imaging = Vec::new();
    for (i, item) in optional_array(obj, "imaging")
        .map_err(|m| schema(idr, "imaging", m))?
        .iter()
        .enumerate()
    {
        let field = format!("imaging[{i}]");
        let item = item
            .as_object()
            .ok_or_else(|| schema(idr, &field, "expected an object".into()))?;
        let get = |key: &str| required_str(item, key).map_err(|m| schema(idr, &format!("{field}.{key}"), m));
        imaging.push(ImagingItem {
            modality: get("modality")?,
            region: get("region")?,
            report: get("report")?,
        });
    }

    let mut clinician_orders = Vec::new();
    for (i, item) in optional_array(obj, "clinician_orders")
        .map_err(|m| schema(idr, "clinician_orders", m))?
        .iter()
        .enumerate()
    {
        let field = format!("clinician_orders[{i}]");
        let item = item
            .as_object()
            .ok_or_else(|| schema(idr, &field, "expected an object".into()))?;
        let action = required_str(item, "action").map_err(|m| schema(idr, &format!("{field}.action"), m))?;
        let input = optional_str(item, "input")
            .map_err(|m| schema(idr, &format!("{field}.input"), m))?
            .unwrap_or_default();
        let order = parse_order(&action, &input, vocab).map_err(|m| schema(idr, &field, m))?;
        clinician_orders.push(order);
    }

    let lab_gating = match optional_str(obj, "lab_gating").map_err(|m| schema(idr, "lab_gating", m))? {
        None => LabGating::PerTest,
        Some(s) if s == "per_test" => LabGating::PerTest,
        Some(s) if s == "consolidated" => LabGating::Consolidated,
        Some(s) => {
            return Err(schema(
                idr,
                "lab_gating",
                format!("expected `per_test` or `consolidated`, got `{s}`"),
            ))
        }
    };

    Ok(EncounterRecord {
        id,
        presenting_complaint,
        physical_exam,
        labs,
        imaging,
        ground_truth,
        pathology,
        clinician_orders,
        language_tag,
        lab_gating,
    })
}

fn parse_order(action: &str, input: &str, vocab: &Vocabulary) -> Result<WorkupAction, String> {
    match ToolKind::from_name(action.trim()) {
        Some(ToolKind::PhysicalExamination) => Ok(WorkupAction::PhysicalExamination),
        Some(ToolKind::LaboratoryTests) => {
            let names = split_lab_names(input);
            if names.is_empty() {
                return Err("laboratory order needs at least one test name".into());
            }
            Ok(WorkupAction::LaboratoryTests { names })
        }
        Some(ToolKind::Imaging) => {
            let (region, modality) = vocab
                .imaging
                .split_request(input)
                .ok_or_else(|| format!("imaging order `{input}` needs a region and a modality"))?;
            Ok(WorkupAction::Imaging { region, modality })
        }
        _ => Err(format!("unsupported clinician order action `{action}`")),
    }
}

/// Splits a raw `Action Input` on commas, trimming and dropping empty names.
pub fn split_lab_names(input: &str) -> Vec<String> {
    input
        .split(',')
        .map(|s| s.trim().trim_end_matches('.').trim())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn required_str(obj: &Map<String, Value>, key: &str) -> Result<String, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Err("missing required field".into()),
        Some(Value::String(s)) if s.trim().is_empty() => Err("must not be empty".into()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err("expected a string".into()),
    }
}

fn optional_str(obj: &Map<String, Value>, key: &str) -> Result<Option<String>, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) if s.trim().is_empty() => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err("expected a string".into()),
    }
}

fn optional_array<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a [Value], String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(&[]),
        Some(Value::Array(items)) => Ok(items.as_slice()),
        Some(_) => Err("expected an array".into()),
    }
}
