//! Pathology rule packs and rule-based process feedback.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encounter::{EncounterRecord, ImagingKey, Vocabulary, WorkupAction};
use crate::protocol::fill_placeholders;
use crate::runner::EpisodeResult;

pub const NO_ISSUES: &str = "No process issues detected.";

const BUILTIN_PACKS: [(&str, &str); 4] = [
    (
        "appendicitis.toml",
        include_str!("../../assets/rulepacks/appendicitis.toml"),
    ),
    (
        "cholecystitis.toml",
        include_str!("../../assets/rulepacks/cholecystitis.toml"),
    ),
    (
        "diverticulitis.toml",
        include_str!("../../assets/rulepacks/diverticulitis.toml"),
    ),
    (
        "pancreatitis.toml",
        include_str!("../../assets/rulepacks/pancreatitis.toml"),
    ),
];

/// Finding codes and the placeholders each template may use.
pub const FINDING_CODES: [(&str, &[&str]); 7] = [
    ("pe_missing", &[]),
    ("pe_not_first", &[]),
    ("no_labs", &["labs"]),
    ("missing_primary_labs", &["labs"]),
    ("no_imaging", &["recommended"]),
    ("imaging_not_recommended", &["imaging", "recommended"]),
    ("efficiency", &["steps", "median"]),
];

#[derive(Debug, thiserror::Error)]
pub enum FeedbackError {
    #[error("reading rule pack {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("rule pack {source_name}: {message}")]
    Invalid { source_name: String, message: String },
    #[error("no rule pack for pathology `{0}`")]
    MissingPack(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImagingSetting {
    pub modality: String,
    pub region: String,
}

impl ImagingSetting {
    pub fn label(&self) -> String {
        format!("{} {}", self.region, self.modality)
    }
}

/// Per-pathology workup expectations and feedback wording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulePack {
    pub pathology: String,
    pub synonyms: Vec<String>,
    pub primary_labs: Vec<String>,
    #[serde(default)]
    pub secondary_labs: Vec<String>,
    pub preferred_imaging: Vec<ImagingSetting>,
    #[serde(default)]
    pub acceptable_imaging: Vec<ImagingSetting>,
    pub feedback_templates: BTreeMap<String, String>,
}

fn placeholders(template: &str) -> BTreeSet<&str> {
    let mut out = BTreeSet::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if after[..close].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && close > 0 => {
                out.insert(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

/// Lowercases and replaces punctuation with spaces, padded so that
/// containment checks respect word boundaries.
pub fn fold_punctuation(text: &str) -> String {
    let replaced: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    format!(" {} ", replaced.split_whitespace().collect::<Vec<_>>().join(" "))
}

impl RulePack {
    pub fn parse_toml(text: &str, source_name: &str) -> Result<Self, FeedbackError> {
        let pack: RulePack = toml::from_str(text).map_err(|e| FeedbackError::Invalid {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })?;
        pack.validate(source_name)?;
        Ok(pack)
    }

    fn validate(&self, source_name: &str) -> Result<(), FeedbackError> {
        let invalid = |message: String| FeedbackError::Invalid {
            source_name: source_name.to_string(),
            message,
        };
        if self.pathology.trim().is_empty() {
            return Err(invalid("pathology is empty".into()));
        }
        if self.synonyms.iter().all(|s| s.trim().is_empty()) {
            return Err(invalid("at least one diagnosis synonym is required".into()));
        }
        let fold = |s: &ImagingSetting| (s.modality.to_lowercase(), s.region.to_lowercase());
        let preferred: BTreeSet<_> = self.preferred_imaging.iter().map(fold).collect();
        if let Some(both) = self.acceptable_imaging.iter().map(fold).find(|s| preferred.contains(s)) {
            return Err(invalid(format!(
                "imaging setting {} {} is both preferred and acceptable",
                both.1, both.0
            )));
        }
        let primary: BTreeSet<_> = self.primary_labs.iter().map(|l| l.to_lowercase()).collect();
        if let Some(dup) = self.secondary_labs.iter().find(|l| primary.contains(&l.to_lowercase())) {
            return Err(invalid(format!("lab `{dup}` is both primary and secondary")));
        }
        for (code, allowed) in FINDING_CODES {
            let template = self
                .feedback_templates
                .get(code)
                .ok_or_else(|| invalid(format!("missing feedback template `{code}`")))?;
            if let Some(bad) = placeholders(template).into_iter().find(|p| !allowed.contains(p)) {
                return Err(invalid(format!("template `{code}` uses unknown placeholder {{{bad}}}")));
            }
        }
        if let Some(extra) = self
            .feedback_templates
            .keys()
            .find(|k| !FINDING_CODES.iter().any(|(c, _)| c == k))
        {
            return Err(invalid(format!("unknown finding code `{extra}`")));
        }
        Ok(())
    }

    /// Case-insensitive, punctuation-folded synonym containment.
    pub fn matches_diagnosis(&self, diagnosis: &str) -> bool {
        let text = fold_punctuation(diagnosis);
        if text.trim().is_empty() {
            return false;
        }
        self.synonyms
            .iter()
            .map(|s| fold_punctuation(s))
            .filter(|s| !s.trim().is_empty())
            .any(|s| text.contains(&s))
    }

    pub fn preferred_keys(&self, vocab: &Vocabulary) -> BTreeSet<ImagingKey> {
        self.preferred_imaging
            .iter()
            .map(|s| vocab.imaging_key(&s.modality, &s.region))
            .collect()
    }

    pub fn acceptable_keys(&self, vocab: &Vocabulary) -> BTreeSet<ImagingKey> {
        self.acceptable_imaging
            .iter()
            .map(|s| vocab.imaging_key(&s.modality, &s.region))
            .collect()
    }

    fn template(&self, code: &str, vars: &[(&'static str, String)]) -> String {
        let vars: BTreeMap<&str, String> = vars.iter().cloned().collect();
        fill_placeholders(&self.feedback_templates[code], &vars)
    }
}

/// Rule packs keyed by case-folded pathology.
#[derive(Debug, Clone, Default)]
pub struct RulePackSet {
    packs: BTreeMap<String, RulePack>,
}

impl RulePackSet {
    pub fn builtin() -> Self {
        let mut set = Self::default();
        for (name, text) in BUILTIN_PACKS {
            set.insert(RulePack::parse_toml(text, name).expect("builtin rule packs are valid"))
                .expect("builtin packs are distinct");
        }
        set
    }

    /// Loads every `*.toml` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, FeedbackError> {
        let io = |source| FeedbackError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "toml"))
            .collect();
        paths.sort();
        let mut set = Self::default();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|source| FeedbackError::Io {
                path: path.display().to_string(),
                source,
            })?;
            set.insert(RulePack::parse_toml(&text, &path.display().to_string())?)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, pack: RulePack) -> Result<(), FeedbackError> {
        let key = pack.pathology.trim().to_lowercase();
        if self.packs.contains_key(&key) {
            return Err(FeedbackError::Invalid {
                source_name: pack.pathology.clone(),
                message: "duplicate pathology".into(),
            });
        }
        self.packs.insert(key, pack);
        Ok(())
    }

    pub fn get(&self, pathology: &str) -> Result<&RulePack, FeedbackError> {
        self.packs
            .get(&pathology.trim().to_lowercase())
            .ok_or_else(|| FeedbackError::MissingPack(pathology.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &RulePack> {
        self.packs.values()
    }

    pub fn len(&self) -> usize {
        self.packs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packs.is_empty()
    }
}

fn format_median(m: f64) -> String {
    if m.fract() == 0.0 {
        format!("{}", m as i64)
    } else {
        format!("{m:.1}")
    }
}

/// Rule-based process feedback for a finished episode: one line per
/// triggered finding, or [`NO_ISSUES`]. `cohort_median` is the median step
/// count of the cohort so far; `None` disables the efficiency check.
pub fn evaluate_process(
    result: &EpisodeResult,
    record: &EncounterRecord,
    pack: &RulePack,
    vocab: &Vocabulary,
    cohort_median: Option<f64>,
) -> String {
    debug_assert!(pack.pathology.eq_ignore_ascii_case(&record.pathology));
    let trace = &result.workup_trace;
    let mut lines = Vec::new();

    match trace
        .iter()
        .position(|a| matches!(a, WorkupAction::PhysicalExamination))
    {
        None => lines.push(pack.template("pe_missing", &[])),
        Some(0) => {}
        Some(_) => lines.push(pack.template("pe_not_first", &[])),
    }

    let requested: BTreeSet<String> = trace
        .iter()
        .filter_map(|a| match a {
            WorkupAction::LaboratoryTests { names } => Some(names),
            _ => None,
        })
        .flatten()
        .map(|n| vocab.canon.key(n))
        .collect();
    let any_labs = trace.iter().any(|a| matches!(a, WorkupAction::LaboratoryTests { .. }));
    if !any_labs {
        lines.push(pack.template("no_labs", &[("labs", pack.primary_labs.join(", "))]));
    } else {
        let missing: Vec<&str> = pack
            .primary_labs
            .iter()
            .filter(|l| !requested.contains(&vocab.canon.key(l)))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            lines.push(pack.template("missing_primary_labs", &[("labs", missing.join(", "))]));
        }
    }

    let recommended = pack
        .preferred_imaging
        .iter()
        .map(ImagingSetting::label)
        .collect::<Vec<_>>()
        .join(" or ");
    let first_imaging = trace.iter().find_map(|a| match a {
        WorkupAction::Imaging { region, modality } => Some((region, modality)),
        _ => None,
    });
    match first_imaging {
        None => lines.push(pack.template("no_imaging", &[("recommended", recommended)])),
        Some((region, modality)) => {
            let key = vocab.imaging_key(modality, region);
            if !pack.preferred_keys(vocab).contains(&key) && !pack.acceptable_keys(vocab).contains(&key) {
                lines.push(pack.template(
                    "imaging_not_recommended",
                    &[
                        ("imaging", format!("{region} {modality}")),
                        ("recommended", recommended),
                    ],
                ));
            }
        }
    }

    if let Some(median) = cohort_median {
        if result.steps_used as f64 > median {
            lines.push(pack.template(
                "efficiency",
                &[
                    ("steps", result.steps_used.to_string()),
                    ("median", format_median(median)),
                ],
            ));
        }
    }

    if lines.is_empty() {
        NO_ISSUES.to_string()
    } else {
        lines.join("\n")
    }
}

/// Median of step counts; `None` for an empty slice.
pub fn median_steps(steps: &[usize]) -> Option<f64> {
    if steps.is_empty() {
        return None;
    }
    let mut s = steps.to_vec();
    s.sort_unstable();
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_packs_load() {
        let set = RulePackSet::builtin();
        assert_eq!(set.len(), 4);
        assert!(set.get("Cholecystitis").is_ok());
        assert!(matches!(set.get("gastritis"), Err(FeedbackError::MissingPack(_))));
    }

    #[test]
    fn diagnosis_matching() {
        let set = RulePackSet::builtin();
        let chole = set.get("cholecystitis").unwrap();
        assert!(chole.matches_diagnosis("Acute calculous cholecystitis"));
        assert!(chole.matches_diagnosis("ACUTE CHOLECYSTITIS."));
        assert!(!chole.matches_diagnosis("Adhesive small bowel obstruction"));
        assert!(!chole.matches_diagnosis(""));
        assert!(!chole.matches_diagnosis("cholecystitisoid"));
    }

    fn base_pack() -> String {
        BUILTIN_PACKS[0].1.to_string()
    }

    #[test]
    fn validation_rejects_overlap_and_missing_templates() {
        let overlap = base_pack().replace(
            "acceptable_imaging = [",
            "acceptable_imaging = [\n    { modality = \"CT\", region = \"abdomen\" },",
        );
        assert!(RulePack::parse_toml(&overlap, "x")
            .unwrap_err()
            .to_string()
            .contains("both preferred"));
        let missing = base_pack()
            .lines()
            .filter(|l| !l.starts_with("efficiency"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(RulePack::parse_toml(&missing, "x")
            .unwrap_err()
            .to_string()
            .contains("efficiency"));
        let bad_placeholder = base_pack().replace("{steps} steps", "{stepz} steps");
        assert!(RulePack::parse_toml(&bad_placeholder, "x")
            .unwrap_err()
            .to_string()
            .contains("stepz"));
    }

    #[test]
    fn medians() {
        assert_eq!(median_steps(&[]), None);
        assert_eq!(median_steps(&[5, 1, 3]), Some(3.0));
        assert_eq!(median_steps(&[4, 1, 3, 2]), Some(2.5));
        assert_eq!(format_median(2.5), "2.5");
        assert_eq!(format_median(6.0), "6");
    }
}
