use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::record::{EncounterRecord, LabGating, WorkupAction};
use super::vocab::{fold_key, Vocabulary};

pub const PHYSICAL_EXAM_UNAVAILABLE: &str = "Physical examination results are not available.";
pub const IMAGING_UNAVAILABLE: &str = "The requested imaging study is not available.";
pub const LABS_UNAVAILABLE: &str = "Laboratory results are not available.";
pub const EMPTY_LAB_REQUEST: &str =
    "Laboratory Tests requires at least one test name in Action Input, separated by commas.";

pub fn lab_unavailable(name: &str) -> String {
    format!("{name}: not available")
}

/// Identifies one disclosable evidence item of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvidenceKey {
    PhysicalExam,
    Lab(usize),
    Imaging(usize),
}

/// An evidence-gated view over one record.
///
/// Only the presenting complaint is visible up front; every other item is
/// disclosed by a matching request. The ground-truth label is never rendered.
#[derive(Debug)]
pub struct EncounterSession<'a> {
    record: &'a EncounterRecord,
    vocab: &'a Vocabulary,
    revealed: BTreeSet<EvidenceKey>,
    request_log: Vec<(usize, WorkupAction)>,
}

pub fn begin_encounter<'a>(record: &'a EncounterRecord, vocab: &'a Vocabulary) -> EncounterSession<'a> {
    EncounterSession {
        record,
        vocab,
        revealed: BTreeSet::new(),
        request_log: Vec::new(),
    }
}

impl<'a> EncounterSession<'a> {
    pub fn record_id(&self) -> &str {
        &self.record.id
    }

    pub fn initial_context(&self) -> &str {
        &self.record.presenting_complaint
    }

    pub fn revealed(&self) -> &BTreeSet<EvidenceKey> {
        &self.revealed
    }

    pub fn request_log(&self) -> &[(usize, WorkupAction)] {
        &self.request_log
    }

    pub fn request_physical_exam(&mut self, step: usize) -> String {
        self.request_log.push((step, WorkupAction::PhysicalExamination));
        match &self.record.physical_exam {
            Some(text) => {
                self.revealed.insert(EvidenceKey::PhysicalExam);
                text.clone()
            }
            None => PHYSICAL_EXAM_UNAVAILABLE.to_string(),
        }
    }

    pub fn request_lab_tests(&mut self, step: usize, names: &[String]) -> String {
        let names: Vec<String> = names
            .iter()
            .map(|n| n.trim().to_string())
            .filter(|n| !n.is_empty())
            .collect();
        if names.is_empty() {
            return EMPTY_LAB_REQUEST.to_string();
        }
        self.request_log
            .push((step, WorkupAction::LaboratoryTests { names: names.clone() }));

        let mut matched = BTreeSet::new();
        let mut missing: Vec<&str> = Vec::new();
        let mut missing_keys = BTreeSet::new();
        for name in &names {
            let hits: Vec<usize> = match self.record.lab_gating {
                LabGating::Consolidated => (0..self.record.labs.len()).collect(),
                LabGating::PerTest => {
                    let wanted = self.vocab.canon.key(name);
                    let literal = fold_key(name);
                    self.record
                        .labs
                        .iter()
                        .enumerate()
                        .filter(|(_, lab)| fold_key(&lab.canonical_id) == wanted || fold_key(&lab.name) == literal)
                        .map(|(i, _)| i)
                        .collect()
                }
            };
            if hits.is_empty() {
                if missing_keys.insert(fold_key(name)) {
                    missing.push(name);
                }
            } else {
                matched.extend(hits);
            }
        }

        let mut lines = Vec::with_capacity(matched.len() + missing.len());
        for i in matched {
            let lab = &self.record.labs[i];
            self.revealed.insert(EvidenceKey::Lab(i));
            lines.push(format!("{}: {}", lab.name, lab.value));
        }
        lines.extend(missing.into_iter().map(lab_unavailable));
        lines.join("\n")
    }

    pub fn request_imaging(&mut self, step: usize, region: &str, modality: &str) -> String {
        self.request_log.push((
            step,
            WorkupAction::Imaging {
                region: region.trim().to_string(),
                modality: modality.trim().to_string(),
            },
        ));
        if region.trim().is_empty() || modality.trim().is_empty() {
            return IMAGING_UNAVAILABLE.to_string();
        }
        let wanted = self.vocab.imaging_key(modality, region);
        let mut reports = Vec::new();
        for (i, item) in self.record.imaging.iter().enumerate() {
            if self.vocab.imaging_key(&item.modality, &item.region) == wanted {
                self.revealed.insert(EvidenceKey::Imaging(i));
                reports.push(item.report.clone());
            }
        }
        if reports.is_empty() {
            IMAGING_UNAVAILABLE.to_string()
        } else {
            reports.join("\n\n")
        }
    }
}

/// Renders the complete agent-visible record for single-pass inference.
pub fn full_record_view(record: &EncounterRecord) -> String {
    let mut out = String::new();
    out.push_str("Patient History:\n");
    out.push_str(record.presenting_complaint.trim());
    out.push_str("\n\nPhysical Examination:\n");
    out.push_str(
        record
            .physical_exam
            .as_deref()
            .map(str::trim)
            .unwrap_or(PHYSICAL_EXAM_UNAVAILABLE),
    );
    out.push_str("\n\nLaboratory Tests:\n");
    if record.labs.is_empty() {
        out.push_str(LABS_UNAVAILABLE);
    } else {
        let lines: Vec<String> = record.labs.iter().map(|l| format!("{}: {}", l.name, l.value)).collect();
        out.push_str(&lines.join("\n"));
    }
    out.push_str("\n\nImaging:\n");
    if record.imaging.is_empty() {
        out.push_str(IMAGING_UNAVAILABLE);
    } else {
        let blocks: Vec<String> = record
            .imaging
            .iter()
            .map(|i| format!("{} {}:\n{}", i.region, i.modality, i.report.trim()))
            .collect();
        out.push_str(&blocks.join("\n\n"));
    }
    out
}
