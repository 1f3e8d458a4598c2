use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dcp::{Dcp, RetrievalEvent};
use crate::feedback::median_steps;
use crate::runner::EpisodeResult;

/// What counts toward an encounter's investigative footprint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Footprint {
    /// Every parsed step, including knowledge lookups and the final answer.
    #[default]
    AllSteps,
    /// Only executed physical exam, lab and imaging actions.
    WorkupOnly,
}

impl Footprint {
    pub fn of(self, result: &EpisodeResult) -> usize {
        match self {
            Footprint::AllSteps => result.steps_used,
            Footprint::WorkupOnly => result.workup_trace.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurdenSplit {
    pub median: f64,
    pub low: BTreeSet<String>,
    pub high: BTreeSet<String>,
}

/// Median split of per-encounter footprints; ties at the median go low.
pub fn stratify_by_burden(footprints: &[(String, usize)]) -> Result<BurdenSplit, EvalError> {
    let steps: Vec<usize> = footprints.iter().map(|(_, s)| *s).collect();
    let median =
        median_steps(&steps).ok_or_else(|| EvalError::Undefined("burden split over zero encounters".into()))?;
    let mut split = BurdenSplit {
        median,
        low: BTreeSet::new(),
        high: BTreeSet::new(),
    };
    for (id, s) in footprints {
        if *s as f64 <= median {
            split.low.insert(id.clone());
        } else {
            split.high.insert(id.clone());
        }
    }
    Ok(split)
}

pub fn footprints(results: &[EpisodeResult], footprint: Footprint) -> Vec<(String, usize)> {
    results
        .iter()
        .map(|r| (r.encounter_id.clone(), footprint.of(r)))
        .collect()
}

fn by_id(results: &[EpisodeResult]) -> BTreeMap<&str, &EpisodeResult> {
    results.iter().map(|r| (r.encounter_id.as_str(), r)).collect()
}

/// Fails unless both result sets cover the same encounter ids.
pub fn check_paired(a: &[EpisodeResult], b: &[EpisodeResult]) -> Result<(), EvalError> {
    let a: BTreeSet<&str> = a.iter().map(|r| r.encounter_id.as_str()).collect();
    let b: BTreeSet<&str> = b.iter().map(|r| r.encounter_id.as_str()).collect();
    if a == b {
        return Ok(());
    }
    Err(EvalError::IdMismatch {
        only_first: a.difference(&b).map(|s| s.to_string()).collect(),
        only_second: b.difference(&a).map(|s| s.to_string()).collect(),
    })
}

/// Encounters correct with experience, incorrect without it, where the
/// experience run retrieved at least one DCP.
pub fn improvement_cases(
    with_dcp: &[EpisodeResult],
    without_dcp: &[EpisodeResult],
) -> Result<BTreeSet<String>, EvalError> {
    check_paired(with_dcp, without_dcp)?;
    let without = by_id(without_dcp);
    Ok(with_dcp
        .iter()
        .filter(|w| {
            w.correct
                && !without[w.encounter_id.as_str()].correct
                && w.retrieval_events.iter().any(|e| !e.returned.is_empty())
        })
        .map(|w| w.encounter_id.clone())
        .collect())
}

/// Incorrect-source rates among retrieval hits. Each hit counts once per
/// event. Rates are `None` when there are no hits to count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEnrichment {
    pub hits_improvement: usize,
    pub incorrect_improvement: usize,
    pub hits_all: usize,
    pub incorrect_all: usize,
    pub rate_improvement: Option<f64>,
    pub rate_all: Option<f64>,
    pub delta: Option<f64>,
}

impl ProvenanceEnrichment {
    pub fn is_no_data(&self) -> bool {
        self.hits_all == 0
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn provenance_enrichment(
    events: &[RetrievalEvent],
    improvement_ids: &BTreeSet<String>,
    dcps: &[Dcp],
) -> Result<ProvenanceEnrichment, EvalError> {
    let source: BTreeMap<&str, bool> = dcps.iter().map(|d| (d.id.as_str(), d.source_correct)).collect();
    let mut p = ProvenanceEnrichment {
        hits_improvement: 0,
        incorrect_improvement: 0,
        hits_all: 0,
        incorrect_all: 0,
        rate_improvement: None,
        rate_all: None,
        delta: None,
    };
    for event in events {
        let in_improvement = improvement_ids.contains(&event.encounter_id);
        for hit in &event.returned {
            let correct = *source
                .get(hit.dcp_id.as_str())
                .ok_or_else(|| EvalError::Integrity(hit.dcp_id.clone()))?;
            p.hits_all += 1;
            p.incorrect_all += usize::from(!correct);
            if in_improvement {
                p.hits_improvement += 1;
                p.incorrect_improvement += usize::from(!correct);
            }
        }
    }
    p.rate_improvement = ratio(p.incorrect_improvement, p.hits_improvement);
    p.rate_all = ratio(p.incorrect_all, p.hits_all);
    p.delta = p.rate_improvement.zip(p.rate_all).map(|(a, b)| a - b);
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub accuracy: f64,
}

/// Evaluates the same cohort at each exposure level. `ks` must be
/// non-decreasing and no larger than `repo_size`.
pub fn learning_curve<F>(ks: &[usize], repo_size: usize, mut eval_fn: F) -> Result<Vec<CurvePoint>, EvalError>
where
    F: FnMut(usize) -> Result<f64, EvalError>,
{
    if ks.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::Invalid("snapshot levels must be ascending".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k > repo_size) {
        return Err(EvalError::Range { k, size: repo_size });
    }
    ks.iter()
        .map(|&k| eval_fn(k).map(|accuracy| CurvePoint { k, accuracy }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalUsage {
    /// Distinct encounters in which each DCP was retrieved.
    pub breadth: BTreeMap<String, usize>,
    pub hits_all: usize,
    pub hits_correcting: usize,
    /// Share of all hits landing on DCPs inside the exposure window.
    pub window_rate_all: Option<f64>,
    /// The same share restricted to error-correcting encounters.
    pub window_rate_correcting: Option<f64>,
}

impl RetrievalUsage {
    pub fn is_no_data(&self) -> bool {
        self.hits_all == 0
    }
}

pub fn retrieval_usage(
    events: &[RetrievalEvent],
    dcps: &[Dcp],
    window: RangeInclusive<usize>,
    correcting_ids: &BTreeSet<String>,
) -> Result<RetrievalUsage, EvalError> {
    let size = dcps.iter().map(|d| d.exposure_index).max().unwrap_or(0);
    if *window.start() < 1 || window.start() > window.end() || *window.end() > size {
        return Err(EvalError::Invalid(format!(
            "exposure window {}..={} outside repository range 1..={size}",
            window.start(),
            window.end()
        )));
    }
    let exposure: BTreeMap<&str, usize> = dcps.iter().map(|d| (d.id.as_str(), d.exposure_index)).collect();
    let mut encounters: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    let (mut all, mut all_in) = (0usize, 0usize);
    let (mut corr, mut corr_in) = (0usize, 0usize);
    for event in events {
        let correcting = correcting_ids.contains(&event.encounter_id);
        for hit in &event.returned {
            let idx = *exposure
                .get(hit.dcp_id.as_str())
                .ok_or_else(|| EvalError::Integrity(hit.dcp_id.clone()))?;
            encounters
                .entry(hit.dcp_id.clone())
                .or_default()
                .insert(event.encounter_id.as_str());
            let inside = window.contains(&idx);
            all += 1;
            all_in += usize::from(inside);
            if correcting {
                corr += 1;
                corr_in += usize::from(inside);
            }
        }
    }
    Ok(RetrievalUsage {
        breadth: encounters.into_iter().map(|(id, e)| (id, e.len())).collect(),
        hits_all: all,
        hits_correcting: corr,
        window_rate_all: ratio(all_in, all),
        window_rate_correcting: ratio(corr_in, corr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcp::RetrievedRef;
    use crate::runner::{Compliance, EpisodeStatus, Regime};

    fn result(id: &str, correct: bool, steps: usize, retrieved: &[&str]) -> EpisodeResult {
        EpisodeResult {
            encounter_id: id.into(),
            regime: Regime::Interactive,
            trajectory: vec![],
            final_diagnosis: None,
            status: EpisodeStatus::Diagnosed,
            correct,
            steps_used: steps,
            repairs: 0,
            retrieval_events: if retrieved.is_empty() {
                vec![]
            } else {
                vec![event(id, retrieved)]
            },
            workup_trace: vec![],
            compliance: Compliance::default(),
            failure: None,
            audit: Default::default(),
        }
    }

    fn event(enc: &str, ids: &[&str]) -> RetrievalEvent {
        RetrievalEvent {
            encounter_id: enc.into(),
            step_index: 1,
            query: "q".into(),
            returned: ids
                .iter()
                .map(|i| RetrievedRef {
                    dcp_id: i.to_string(),
                    similarity: 0.5,
                })
                .collect(),
        }
    }

    fn dcp(idx: usize, source_correct: bool) -> Dcp {
        Dcp {
            id: crate::dcp::dcp_id(idx),
            pattern: "p".into(),
            ordering: "o".into(),
            decision: "d".into(),
            exposure_index: idx,
            pathology: "appendicitis".into(),
            source_correct,
            source_encounter_id: format!("a{idx}"),
            created_at: chrono::DateTime::UNIX_EPOCH,
            retracted: false,
            retraction_reasons: vec![],
        }
    }

    fn ids(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn burden_median_split() {
        let f: Vec<(String, usize)> = [("a", 2), ("b", 3), ("c", 5), ("d", 7)]
            .iter()
            .map(|(i, s)| (i.to_string(), *s))
            .collect();
        let s = stratify_by_burden(&f).unwrap();
        assert_eq!(s.median, 4.0);
        assert_eq!(s.low, ids(&["a", "b"]));
        assert_eq!(s.high, ids(&["c", "d"]));
        let tied = stratify_by_burden(&[("x".into(), 3), ("y".into(), 3)]).unwrap();
        assert!(tied.high.is_empty());
        assert!(stratify_by_burden(&[]).is_err());
    }

    #[test]
    fn improvement_requires_all_three_conditions() {
        let with = vec![
            result("e1", true, 5, &["dcp-000001"]),
            result("e2", true, 5, &["dcp-000001"]),
            result("e3", true, 5, &[]),
        ];
        let without = vec![
            result("e1", false, 5, &[]),
            result("e2", true, 5, &[]),
            result("e3", false, 5, &[]),
        ];
        assert_eq!(improvement_cases(&with, &without).unwrap(), ids(&["e1"]));
        assert!(improvement_cases(&with, &with).unwrap().is_empty());
    }

    #[test]
    fn improvement_id_mismatch_lists_difference() {
        let err = improvement_cases(&[result("e1", true, 1, &[])], &[result("e2", false, 1, &[])]).unwrap_err();
        match err {
            EvalError::IdMismatch {
                only_first,
                only_second,
            } => {
                assert_eq!(only_first, vec!["e1".to_string()]);
                assert_eq!(only_second, vec!["e2".to_string()]);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn provenance_example() {
        // dcp 1,2 incorrect sources; 3 correct.
        let dcps = vec![dcp(1, false), dcp(2, false), dcp(3, true)];
        let (a, b, c) = ("dcp-000001", "dcp-000002", "dcp-000003");
        let events = vec![event("imp", &[a, b, c]), event("other", &[c, c, c])];
        let p = provenance_enrichment(&events, &ids(&["imp"]), &dcps).unwrap();
        assert_eq!(p.rate_improvement, Some(2.0 / 3.0));
        assert_eq!(p.rate_all, Some(2.0 / 6.0));
        // Pooled {F,T,T,T}.
        let events = [event("imp", &[a, b, c]), event("x", &[a, c, c, c])];
        let p = provenance_enrichment(&events[1..], &ids(&[]), &dcps).unwrap();
        assert_eq!(p.rate_all, Some(0.25));
        assert!(provenance_enrichment(&[], &ids(&[]), &dcps).unwrap().is_no_data());
        assert!(matches!(
            provenance_enrichment(&[event("x", &["dcp-000009"])], &ids(&[]), &dcps),
            Err(EvalError::Integrity(_))
        ));
    }

    #[test]
    fn usage_breadth_and_window() {
        let dcps: Vec<Dcp> = (1..=5).map(|i| dcp(i, true)).collect();
        let events = vec![
            event("e1", &["dcp-000001"]),
            event("e1", &["dcp-000001"]),
            event("e2", &["dcp-000001", "dcp-000005"]),
        ];
        let u = retrieval_usage(&events, &dcps, 1..=5, &ids(&[])).unwrap();
        assert_eq!(u.breadth["dcp-000001"], 2);
        assert_eq!(u.window_rate_all, Some(1.0));
        assert_eq!(u.window_rate_correcting, None);
        assert!(retrieval_usage(&events, &dcps, 0..=2, &ids(&[])).is_err());
        assert!(retrieval_usage(&[], &dcps, 1..=2, &ids(&[])).unwrap().is_no_data());
    }

    #[test]
    fn curve_checks_levels() {
        let pts = learning_curve(&[0, 2, 2], 2, |k| Ok(k as f64 / 4.0)).unwrap();
        assert_eq!(pts[1], pts[2]);
        assert!(matches!(
            learning_curve(&[3], 2, |_| Ok(0.0)),
            Err(EvalError::Range { .. })
        ));
        assert!(learning_curve(&[2, 1], 2, |_| Ok(0.0)).is_err());
    }
}
