use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::encounter::{CanonMap, EncounterRecord, ImagingKey, Vocabulary, WorkupAction, WorkupType};
use crate::feedback::RulePack;
use crate::runner::{EpisodeResult, EpisodeStatus};

/// Fraction of correct episodes. Step-cap and backend failures count as
/// incorrect unless `exclude_backend_failures` drops the latter from the
/// denominator.
pub fn accuracy(results: &[EpisodeResult], exclude_backend_failures: bool) -> Result<f64, EvalError> {
    let scored: Vec<&EpisodeResult> = results
        .iter()
        .filter(|r| !(exclude_backend_failures && r.status == EpisodeStatus::BackendFailure))
        .collect();
    if scored.is_empty() {
        return Err(EvalError::Undefined("accuracy over zero episodes".into()));
    }
    let correct = scored.iter().filter(|r| r.correct).count();
    Ok(correct as f64 / scored.len() as f64)
}

/// Set F1 with the empty-set conventions: both empty is 1, one empty is 0.
pub fn set_f1<T: Ord>(agent: &BTreeSet<T>, record: &BTreeSet<T>) -> f64 {
    match (agent.is_empty(), record.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let tp = agent.intersection(record).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    // 2PR/(P+R) reduces to 2tp/(|A|+|B|).
    2.0 * tp / (agent.len() + record.len()) as f64
}

pub fn lab_set_f1<S: AsRef<str>>(agent_labs: &[S], record_labs: &[S], map: &CanonMap) -> f64 {
    let canon = |xs: &[S]| xs.iter().map(|x| map.key(x.as_ref())).collect::<BTreeSet<_>>();
    set_f1(&canon(agent_labs), &canon(record_labs))
}

pub fn imaging_set_f1(agent_pairs: &BTreeSet<ImagingKey>, record_pairs: &BTreeSet<ImagingKey>) -> f64 {
    set_f1(agent_pairs, record_pairs)
}

/// First occurrence of each broad type, in order.
pub fn first_types(trace: &[WorkupAction]) -> Vec<WorkupType> {
    let mut out = Vec::new();
    for t in trace.iter().map(WorkupAction::workup_type) {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Fraction of type pairs ordered `a` before `b` in `reference` that the
/// agent also ordered `a` before `b`, over the types both sequences contain.
/// Fewer than two shared types gives 1.
pub fn order_concordance(agent_order: &[WorkupType], reference_order: &[WorkupType]) -> f64 {
    let position = |seq: &[WorkupType], t: WorkupType| seq.iter().position(|&x| x == t);
    let mut shared: Vec<WorkupType> = Vec::new();
    for &t in reference_order {
        if position(agent_order, t).is_some() && !shared.contains(&t) {
            shared.push(t);
        }
    }
    if shared.len() < 2 {
        return 1.0;
    }
    let (mut total, mut agree) = (0usize, 0usize);
    for i in 0..shared.len() {
        for j in i + 1..shared.len() {
            total += 1;
            if position(agent_order, shared[i]) < position(agent_order, shared[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}

/// 100 when the physical exam is the first workup action, 50 when it comes
/// later, 0 when absent.
pub fn pe_timing_score(trace: &[WorkupAction]) -> f64 {
    match trace
        .iter()
        .position(|a| matches!(a, WorkupAction::PhysicalExamination))
    {
        Some(0) => 100.0,
        Some(_) => 50.0,
        None => 0.0,
    }
}

/// Weighted coverage of the pack's recommended labs: primaries weigh 1,
/// secondaries 0.5 with their total capped at the primary maximum.
pub fn lab_adherence_score<S: AsRef<str>>(agent_labs: &[S], pack: &RulePack, map: &CanonMap) -> f64 {
    if pack.primary_labs.is_empty() && pack.secondary_labs.is_empty() {
        return 100.0;
    }
    let requested: BTreeSet<String> = agent_labs.iter().map(|l| map.key(l.as_ref())).collect();
    let primary: BTreeSet<String> = pack.primary_labs.iter().map(|l| map.key(l)).collect();
    let secondary: BTreeSet<String> = pack.secondary_labs.iter().map(|l| map.key(l)).collect();
    let primary_max = primary.len() as f64;
    let primary_hit = primary.intersection(&requested).count() as f64;
    let secondary_hit = 0.5 * secondary.intersection(&requested).count() as f64;
    let achieved = primary_hit + secondary_hit.min(primary_max);
    let max_attainable = primary_max + (0.5 * secondary.len() as f64).min(primary_max);
    if max_attainable == 0.0 {
        // Only secondaries configured: the cap leaves nothing attainable.
        return 100.0;
    }
    100.0 * achieved / max_attainable
}

/// Scores only the first imaging request: preferred 100, acceptable 50,
/// anything else or no imaging 0.
pub fn imaging_adherence_score(trace: &[WorkupAction], pack: &RulePack, vocab: &Vocabulary) -> f64 {
    let first = trace.iter().find_map(|a| match a {
        WorkupAction::Imaging { region, modality } => Some(vocab.imaging_key(modality, region)),
        _ => None,
    });
    match first {
        Some(k) if pack.preferred_keys(vocab).contains(&k) => 100.0,
        Some(k) if pack.acceptable_keys(vocab).contains(&k) => 50.0,
        _ => 0.0,
    }
}

pub(crate) fn lab_names(trace: &[WorkupAction]) -> Vec<String> {
    trace
        .iter()
        .filter_map(|a| match a {
            WorkupAction::LaboratoryTests { names } => Some(names.iter().cloned()),
            _ => None,
        })
        .flatten()
        .collect()
}

pub(crate) fn imaging_keys(trace: &[WorkupAction], vocab: &Vocabulary) -> BTreeSet<ImagingKey> {
    trace
        .iter()
        .filter_map(|a| match a {
            WorkupAction::Imaging { region, modality } => Some(vocab.imaging_key(modality, region)),
            _ => None,
        })
        .collect()
}

fn check_unit(name: &str, v: f64) {
    assert!((0.0..=1.0).contains(&v), "{name} = {v} outside [0, 1]");
}

fn check_percent(name: &str, v: f64) {
    assert!((0.0..=100.0).contains(&v), "{name} = {v} outside [0, 100]");
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub pe_agreement: f64,
    pub lab_f1: f64,
    pub imaging_f1: f64,
    pub order_concordance: f64,
    pub overall: f64,
}

impl ConsistencyReport {
    pub fn new(pe_agreement: f64, lab_f1: f64, imaging_f1: f64, order_concordance: f64) -> Self {
        for (n, v) in [
            ("pe_agreement", pe_agreement),
            ("lab_f1", lab_f1),
            ("imaging_f1", imaging_f1),
            ("order_concordance", order_concordance),
        ] {
            check_unit(n, v);
        }
        Self {
            pe_agreement,
            lab_f1,
            imaging_f1,
            order_concordance,
            overall: (pe_agreement + lab_f1 + imaging_f1 + order_concordance) / 4.0,
        }
    }

    /// Compares the agent's executed workup with the record's documented
    /// labs, imaging and order sequence.
    pub fn compute(result: &EpisodeResult, record: &EncounterRecord, vocab: &Vocabulary) -> Self {
        let trace = &result.workup_trace;
        let pe = if trace.iter().any(|a| matches!(a, WorkupAction::PhysicalExamination)) {
            1.0
        } else {
            0.0
        };
        let record_labs: Vec<String> = record.labs.iter().map(|l| l.name.clone()).collect();
        let record_imaging: BTreeSet<ImagingKey> = record
            .imaging
            .iter()
            .map(|i| vocab.imaging_key(&i.modality, &i.region))
            .collect();
        Self::new(
            pe,
            lab_set_f1(&lab_names(trace), &record_labs, &vocab.canon),
            imaging_set_f1(&imaging_keys(trace, vocab), &record_imaging),
            order_concordance(&first_types(trace), &first_types(&record.clinician_orders)),
        )
    }

    /// Component-wise mean; `None` for an empty slice.
    pub fn mean(reports: &[Self]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&Self) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(Self::new(
            avg(|r| r.pe_agreement),
            avg(|r| r.lab_f1),
            avg(|r| r.imaging_f1),
            avg(|r| r.order_concordance),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdherenceReport {
    pub pe_timing: f64,
    pub lab_adherence: f64,
    pub imaging_adherence: f64,
    pub overall: f64,
}

impl AdherenceReport {
    pub fn new(pe_timing: f64, lab_adherence: f64, imaging_adherence: f64) -> Self {
        for (n, v) in [
            ("pe_timing", pe_timing),
            ("lab_adherence", lab_adherence),
            ("imaging_adherence", imaging_adherence),
        ] {
            check_percent(n, v);
        }
        Self {
            pe_timing,
            lab_adherence,
            imaging_adherence,
            overall: (pe_timing + lab_adherence + imaging_adherence) / 3.0,
        }
    }

    pub fn compute(result: &EpisodeResult, pack: &RulePack, vocab: &Vocabulary) -> Self {
        let trace = &result.workup_trace;
        Self::new(
            pe_timing_score(trace),
            lab_adherence_score(&lab_names(trace), pack, &vocab.canon),
            imaging_adherence_score(trace, pack, vocab),
        )
    }

    pub fn mean(reports: &[Self]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&Self) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(Self::new(
            avg(|r| r.pe_timing),
            avg(|r| r.lab_adherence),
            avg(|r| r.imaging_adherence),
        ))
    }
}
