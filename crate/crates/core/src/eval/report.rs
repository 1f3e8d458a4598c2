use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::analysis::{
    check_paired, footprints, improvement_cases, provenance_enrichment, retrieval_usage, stratify_by_burden, Footprint,
    ProvenanceEnrichment, RetrievalUsage,
};
use super::metrics::{accuracy, AdherenceReport, ConsistencyReport};
use super::EvalError;
use crate::dcp::{Dcp, RetrievalEvent};
use crate::encounter::{EncounterRecord, Vocabulary};
use crate::feedback::RulePackSet;
use crate::runner::{EpisodeResult, EpisodeStatus, Regime};

pub const REPORT_FILE: &str = "report.json";
pub const ANALYSIS_FILE: &str = "analysis.json";
const NO_DATA: &str = "no data";

/// The settings a run was produced under, echoed into its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub regime: Regime,
    pub dcp_enabled: bool,
    pub guidelines_enabled: bool,
    pub pubmed_enabled: bool,
    pub snapshot_k: Option<usize>,
    pub exclude_backend_failures: bool,
    pub canon_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterMetrics {
    pub encounter_id: String,
    pub pathology: String,
    pub status: EpisodeStatus,
    pub correct: bool,
    pub steps_used: usize,
    pub retrieval_events: usize,
    pub consistency: Option<ConsistencyReport>,
    pub adherence: Option<AdherenceReport>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRates {
    pub physical_exam: f64,
    pub laboratory: f64,
    pub imaging: f64,
    pub experience_search: f64,
    pub guideline_search: f64,
    pub all: f64,
}

impl ComplianceRates {
    pub fn compute(results: &[EpisodeResult]) -> Self {
        if results.is_empty() {
            return Self::default();
        }
        let n = results.len() as f64;
        let rate = |f: &dyn Fn(&EpisodeResult) -> bool| results.iter().filter(|r| f(r)).count() as f64 / n;
        Self {
            physical_exam: rate(&|r| r.compliance.physical_exam),
            laboratory: rate(&|r| r.compliance.laboratory),
            imaging: rate(&|r| r.compliance.imaging),
            experience_search: rate(&|r| r.compliance.experience_search),
            guideline_search: rate(&|r| r.compliance.guideline_search),
            all: rate(&|r| r.compliance.all()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub run: RunInfo,
    pub encounters: usize,
    pub accuracy: f64,
    pub status_counts: BTreeMap<String, usize>,
    /// Interactive runs only; a full-record pass issues no workup.
    pub consistency: Option<ConsistencyReport>,
    pub adherence: Option<AdherenceReport>,
    pub compliance: Option<ComplianceRates>,
    pub per_encounter: Vec<EncounterMetrics>,
}

fn status_name(s: EpisodeStatus) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Scores a finished run. Rows follow `results` order. Adherence is left
/// empty for encounters whose pathology has no rule pack.
pub fn build_report(
    run: RunInfo,
    results: &[EpisodeResult],
    records: &[EncounterRecord],
    vocab: &Vocabulary,
    packs: &RulePackSet,
) -> Result<EvaluationReport, EvalError> {
    let by_id: BTreeMap<&str, &EncounterRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let interactive = run.regime == Regime::Interactive;
    let mut rows = Vec::with_capacity(results.len());
    let mut status_counts = BTreeMap::new();
    for result in results {
        let record = by_id
            .get(result.encounter_id.as_str())
            .ok_or_else(|| EvalError::Invalid(format!("no record for encounter `{}`", result.encounter_id)))?;
        *status_counts.entry(status_name(result.status)).or_insert(0) += 1;
        let (consistency, adherence) = if interactive {
            (
                Some(ConsistencyReport::compute(result, record, vocab)),
                packs
                    .get(&record.pathology)
                    .ok()
                    .map(|p| AdherenceReport::compute(result, p, vocab)),
            )
        } else {
            (None, None)
        };
        rows.push(EncounterMetrics {
            encounter_id: result.encounter_id.clone(),
            pathology: record.pathology.clone(),
            status: result.status,
            correct: result.correct,
            steps_used: result.steps_used,
            retrieval_events: result.retrieval_events.len(),
            consistency,
            adherence,
        });
    }
    let consistency: Vec<ConsistencyReport> = rows.iter().filter_map(|r| r.consistency).collect();
    let adherence: Vec<AdherenceReport> = rows.iter().filter_map(|r| r.adherence).collect();
    Ok(EvaluationReport {
        accuracy: accuracy(results, run.exclude_backend_failures)?,
        encounters: results.len(),
        status_counts,
        consistency: ConsistencyReport::mean(&consistency),
        adherence: AdherenceReport::mean(&adherence),
        compliance: interactive.then(|| ComplianceRates::compute(results)),
        per_encounter: rows,
        run,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| NO_DATA.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        to_json(self)
    }

    /// Writes `report.json` plus one TSV per metric family into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        write_file(&dir.join(REPORT_FILE), &self.to_json())?;

        let mut outcomes = String::from("encounter_id\tpathology\tstatus\tcorrect\tsteps_used\tretrieval_events\n");
        for r in &self.per_encounter {
            let _ = writeln!(
                outcomes,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.encounter_id,
                r.pathology,
                status_name(r.status),
                r.correct,
                r.steps_used,
                r.retrieval_events
            );
        }
        write_file(&dir.join("outcomes.tsv"), &outcomes)?;

        if self.run.regime == Regime::Interactive {
            let mut c = String::from("encounter_id\tpe_agreement\tlab_f1\timaging_f1\torder_concordance\toverall\n");
            let mut a = String::from("encounter_id\tpe_timing\tlab_adherence\timaging_adherence\toverall\n");
            for r in &self.per_encounter {
                if let Some(x) = r.consistency {
                    let _ = writeln!(
                        c,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        r.encounter_id, x.pe_agreement, x.lab_f1, x.imaging_f1, x.order_concordance, x.overall
                    );
                }
                match r.adherence {
                    Some(x) => {
                        let _ = writeln!(
                            a,
                            "{}\t{}\t{}\t{}\t{}",
                            r.encounter_id, x.pe_timing, x.lab_adherence, x.imaging_adherence, x.overall
                        );
                    }
                    None => {
                        let _ = writeln!(a, "{}\t{NO_DATA}\t{NO_DATA}\t{NO_DATA}\t{NO_DATA}", r.encounter_id);
                    }
                }
            }
            write_file(&dir.join("consistency.tsv"), &c)?;
            write_file(&dir.join("adherence.tsv"), &a)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumDelta {
    pub encounters: usize,
    pub accuracy_with: Option<f64>,
    pub accuracy_without: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurdenReport {
    pub footprint: Footprint,
    pub median: f64,
    pub low: StratumDelta,
    pub high: StratumDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowUsage {
    pub first: usize,
    pub last: usize,
    pub usage: RetrievalUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub improvement_cases: BTreeSet<String>,
    pub provenance: ProvenanceEnrichment,
    pub burden: BurdenReport,
    /// One entry per requested exposure window; empty when no retrievals
    /// were logged.
    pub retrieval_usage: Vec<WindowUsage>,
}

fn subset_accuracy(results: &[EpisodeResult], ids: &BTreeSet<String>) -> Option<f64> {
    let picked: Vec<EpisodeResult> = results
        .iter()
        .filter(|r| ids.contains(&r.encounter_id))
        .cloned()
        .collect();
    accuracy(&picked, false).ok()
}

fn stratum(with: &[EpisodeResult], without: &[EpisodeResult], ids: &BTreeSet<String>) -> StratumDelta {
    let a = subset_accuracy(with, ids);
    let b = subset_accuracy(without, ids);
    StratumDelta {
        encounters: ids.len(),
        accuracy_with: a,
        accuracy_without: b,
        delta: a.zip(b).map(|(x, y)| x - y),
    }
}

/// Paired comparison of an experience run against its experience-free
/// ablation. `baseline` supplies the burden footprints.
pub fn analyze(
    with_dcp: &[EpisodeResult],
    without_dcp: &[EpisodeResult],
    baseline: &[EpisodeResult],
    dcps: &[Dcp],
    footprint: Footprint,
    windows: &[RangeInclusive<usize>],
) -> Result<AnalysisReport, EvalError> {
    check_paired(with_dcp, without_dcp)?;
    check_paired(with_dcp, baseline)?;
    let improvement = improvement_cases(with_dcp, without_dcp)?;
    let events: Vec<RetrievalEvent> = with_dcp
        .iter()
        .flat_map(|r| r.retrieval_events.iter().cloned())
        .collect();
    let provenance = provenance_enrichment(&events, &improvement, dcps)?;
    let split = stratify_by_burden(&footprints(baseline, footprint))?;
    let burden = BurdenReport {
        footprint,
        median: split.median,
        low: stratum(with_dcp, without_dcp, &split.low),
        high: stratum(with_dcp, without_dcp, &split.high),
    };
    let mut usage = Vec::new();
    if events.iter().any(|e| !e.returned.is_empty()) {
        for w in windows {
            usage.push(WindowUsage {
                first: *w.start(),
                last: *w.end(),
                usage: retrieval_usage(&events, dcps, w.clone(), &improvement)?,
            });
        }
    }
    Ok(AnalysisReport {
        improvement_cases: improvement,
        provenance,
        burden,
        retrieval_usage: usage,
    })
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        write_file(&dir.join(ANALYSIS_FILE), &self.to_json())?;

        let mut imp = String::from("encounter_id\n");
        for id in &self.improvement_cases {
            let _ = writeln!(imp, "{id}");
        }
        write_file(&dir.join("improvement_cases.tsv"), &imp)?;

        let p = &self.provenance;
        let prov = format!(
            "group\thits\tincorrect_source\trate\nimprovement\t{}\t{}\t{}\nall\t{}\t{}\t{}\ndelta\t\t\t{}\n",
            p.hits_improvement,
            p.incorrect_improvement,
            opt(p.rate_improvement),
            p.hits_all,
            p.incorrect_all,
            opt(p.rate_all),
            opt(p.delta)
        );
        write_file(&dir.join("provenance.tsv"), &prov)?;

        let mut burden = format!(
            "# median footprint: {}\nstratum\tencounters\taccuracy_with\taccuracy_without\tdelta\n",
            self.burden.median
        );
        for (name, s) in [("low", &self.burden.low), ("high", &self.burden.high)] {
            let _ = writeln!(
                burden,
                "{name}\t{}\t{}\t{}\t{}",
                s.encounters,
                opt(s.accuracy_with),
                opt(s.accuracy_without),
                opt(s.delta)
            );
        }
        write_file(&dir.join("burden.tsv"), &burden)?;

        // Breadth does not depend on the window, so it is written once.
        let mut usage = String::from("dcp_id\tbreadth\n");
        if let Some(w) = self.retrieval_usage.first() {
            for (id, b) in &w.usage.breadth {
                let _ = writeln!(usage, "{id}\t{b}");
            }
        }
        let mut rates = String::from("window\thits_all\twindow_rate_all\thits_correcting\twindow_rate_correcting\n");
        if self.retrieval_usage.is_empty() {
            let _ = writeln!(rates, "{NO_DATA}\t0\t{NO_DATA}\t0\t{NO_DATA}");
        }
        for w in &self.retrieval_usage {
            let name = format!("{}-{}", w.first, w.last);
            let _ = writeln!(
                rates,
                "{name}\t{}\t{}\t{}\t{}",
                w.usage.hits_all,
                opt(w.usage.window_rate_all),
                w.usage.hits_correcting,
                opt(w.usage.window_rate_correcting)
            );
        }
        write_file(&dir.join("retrieval_breadth.tsv"), &usage)?;
        write_file(&dir.join("retrieval_windows.tsv"), &rates)?;
        Ok(())
    }
}
