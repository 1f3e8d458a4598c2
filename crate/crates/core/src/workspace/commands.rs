use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Utc;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::registry::{CohortRegistry, CohortRole};
use super::{file_safe, Workspace, WorkspaceError};
use crate::dcp::{ConsolidationOutcome, Consolidator, Dcp, DcpFilter, DcpRepository, DcpSnapshot, EVENTS_FILE};
use crate::encounter::{check_cohort, load_cohort, EncounterRecord};
use crate::eval::{analyze, build_report, AnalysisReport, EvaluationReport, RunInfo};
use crate::feedback::{evaluate_process, median_steps};
use crate::gateway::{RecordingBackend, ScriptMode, TextBackend};
use crate::knowledge::{index_corpus, load_corpus};
use crate::protocol::{render_dcp, DcpFields};
use crate::runner::{run_episode, run_full_information, EpisodeResult, EpisodeStatus, Regime, Tools};

pub const ACCRUAL_LOG: &str = "accrual.ndjson";
const ENCOUNTERS_DIR: &str = "encounters";

fn write(path: &Path, text: &str) -> Result<(), WorkspaceError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| WorkspaceError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| WorkspaceError::io(path, e))
}

fn cohort_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Writes `trajectory.ndjson`, `audit.ndjson` and `result.json` for one
/// episode under `dir`.
pub fn write_episode_artifacts(dir: &Path, result: &EpisodeResult) -> Result<(), WorkspaceError> {
    let mut trajectory = String::new();
    for entry in &result.trajectory {
        trajectory.push_str(&serde_json::to_string(entry).expect("trajectory serializes"));
        trajectory.push('\n');
    }
    write(&dir.join("trajectory.ndjson"), &trajectory)?;
    write(&dir.join("audit.ndjson"), &result.audit.to_ndjson())?;
    let mut json = serde_json::to_string_pretty(result).expect("result serializes");
    json.push('\n');
    write(&dir.join("result.json"), &json)
}

/// Reads every `result.json` of a run, ordered by encounter id.
pub fn load_run_results(run_dir: &Path) -> Result<Vec<EpisodeResult>, WorkspaceError> {
    let dir = run_dir.join(ENCOUNTERS_DIR);
    let entries = std::fs::read_dir(&dir).map_err(|e| WorkspaceError::io(&dir, e))?;
    let mut results = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| WorkspaceError::io(&dir, e))?
            .path()
            .join("result.json");
        if !path.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| WorkspaceError::io(&path, e))?;
        let r: EpisodeResult =
            serde_json::from_str(&text).map_err(|e| WorkspaceError::Config(format!("{}: {e}", path.display())))?;
        results.push(r);
    }
    results.sort_by(|a, b| a.encounter_id.cmp(&b.encounter_id));
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub records: usize,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Schema and label-firewall check of a cohort file without running it.
pub fn cmd_validate(ws: &Workspace, cohort: &Path) -> Result<ValidationReport, WorkspaceError> {
    let vocab = ws.vocabulary()?;
    let packs = ws.rule_packs()?;
    let firewall = ws.firewall(&packs);
    let text = std::fs::read_to_string(cohort).map_err(|e| WorkspaceError::io(cohort, e))?;
    let check = check_cohort(&text, &vocab, &firewall);
    let mut problems: Vec<String> = check.errors.iter().map(ToString::to_string).collect();
    problems.extend(
        check
            .duplicate_ids
            .iter()
            .map(|id| format!("record `{id}`: duplicate id")),
    );
    for r in &check.records {
        if packs.get(&r.pathology).is_err() {
            problems.push(format!(
                "record `{}`: no rule pack for pathology `{}`",
                r.id, r.pathology
            ));
        }
    }
    Ok(ValidationReport {
        records: check.records.len(),
        problems,
    })
}

/// Chunks and embeds the configured guideline corpus and saves the index.
/// Returns the index path and chunk count.
pub fn cmd_index_guidelines(ws: &Workspace, corpus: Option<&Path>) -> Result<(PathBuf, usize), WorkspaceError> {
    let g = &ws.config().guidelines;
    let corpus = corpus.map(Path::to_path_buf).unwrap_or_else(|| ws.resolve(&g.corpus));
    let docs = load_corpus(&corpus)?;
    let embedder = ws.embedder()?;
    let index = index_corpus(&docs, &g.chunking, &embedder)?;
    let out = ws.resolve(&g.index);
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(|e| WorkspaceError::io(parent, e))?;
    }
    index.save(&out)?;
    Ok((out, index.index.len()))
}

fn load_checked_cohort(ws: &Workspace, path: &Path, role: CohortRole) -> Result<Vec<EncounterRecord>, WorkspaceError> {
    let vocab = ws.vocabulary()?;
    let packs = ws.rule_packs()?;
    let records = load_cohort(path, &vocab, &ws.firewall(&packs))?;
    let mut registry = CohortRegistry::load(ws.root())?;
    registry.register(&cohort_name(path), role, records.iter().map(|r| r.id.clone()))?;
    registry.save(ws.root())?;
    Ok(records)
}

#[derive(Debug, Clone, Default)]
pub struct AccrueOptions {
    pub cohort: PathBuf,
    pub repo: String,
    /// Overrides the configured reply script.
    pub script: Option<PathBuf>,
    /// Stop after this many new encounters.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AccrualLine {
    encounter_id: String,
    status: EpisodeStatus,
    correct: bool,
    steps_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccrualSummary {
    pub already_processed: usize,
    pub processed: usize,
    pub created: usize,
    pub skipped: usize,
    pub repository_size: usize,
    /// Accuracy over every accrual episode logged in this repository.
    pub running_accuracy: Option<f64>,
}

fn read_accrual_log(path: &Path) -> Result<Vec<AccrualLine>, WorkspaceError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(WorkspaceError::io(path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| WorkspaceError::Config(format!("{}: {e}", path.display()))))
        .collect()
}

fn append_line(path: &Path, line: &str) -> Result<(), WorkspaceError> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| WorkspaceError::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| WorkspaceError::io(path, e))
}

/// Runs episodes over the cohort in file order and consolidates each into
/// the repository. Encounters already in the repository log are skipped, so
/// an interrupted accrual resumes at the next exposure index.
pub fn cmd_accrue(ws: &Workspace, opts: &AccrueOptions) -> Result<AccrualSummary, WorkspaceError> {
    let cfg = ws.config();
    let records = load_checked_cohort(ws, &opts.cohort, CohortRole::Accrual)?;
    let vocab = ws.vocabulary()?;
    let packs = ws.rule_packs()?;
    let profile = ws.profile()?;
    let embedder = ws.embedder()?;
    let guidelines = ws.guideline_searcher(&embedder)?;
    let pubmed = ws.pubmed()?;
    let script = opts.script.as_deref();
    let (backend, mode) = ws.text_backend(script)?;
    let gateway = ws.gateway(backend, mode.is_some());

    let repo_dir = ws.repo_dir(&opts.repo);
    let mut repo = DcpRepository::open(&repo_dir)?;
    if let Some(tag) = repo.encoder_tag() {
        if tag != embedder.tag() {
            return Err(WorkspaceError::Config(format!(
                "repository encoder is `{tag}` but the configured embedder is `{}`",
                embedder.tag()
            )));
        }
    }
    let log_path = repo_dir.join(ACCRUAL_LOG);
    let mut log = read_accrual_log(&log_path)?;

    let mut episode_cfg = cfg.episode.clone();
    episode_cfg.snapshot_limit = None;
    episode_cfg.pubmed_enabled &= pubmed.is_some();
    let consolidator = Consolidator {
        gateway: &gateway,
        embedder: &embedder,
        profile: &profile,
        params: &cfg.consolidation.generation,
    };

    let done: BTreeSet<String> = repo.processed_encounters().map(str::to_string).collect();
    let mut summary = AccrualSummary {
        already_processed: records.iter().filter(|r| done.contains(&r.id)).count(),
        processed: 0,
        created: 0,
        skipped: 0,
        repository_size: repo.len(),
        running_accuracy: None,
    };
    for record in records.iter().filter(|r| !done.contains(&r.id)) {
        if opts.limit.is_some_and(|l| summary.processed >= l) {
            break;
        }
        let snapshot = repo.snapshot();
        let tools = Tools {
            vocab: &vocab,
            profile: &profile,
            rule_packs: &packs,
            experience: Some(&snapshot),
            embedder: Some(&embedder),
            guidelines: Some(&guidelines),
            pubmed: pubmed.as_ref(),
        };
        let mut result = run_episode(record, &episode_cfg, tools, &gateway)?;
        let episode_dir = repo_dir.join("episodes").join(file_safe(&record.id));
        if result.status == EpisodeStatus::BackendFailure {
            write_episode_artifacts(&episode_dir, &result)?;
            return Err(WorkspaceError::Backend(format!(
                "encounter `{}`: {}",
                record.id,
                result.failure.as_deref().unwrap_or("unknown error")
            )));
        }
        let steps: Vec<usize> = log.iter().map(|l| l.steps_used).collect();
        let pack = packs.get(&record.pathology)?;
        let feedback = evaluate_process(&result, record, pack, &vocab, median_steps(&steps));
        let mut audit = std::mem::take(&mut result.audit);
        let outcome = consolidator.consolidate(&mut repo, &result, record, &feedback, &mut audit, Utc::now());
        result.audit = audit;
        write_episode_artifacts(&episode_dir, &result)?;
        match outcome? {
            ConsolidationOutcome::Inserted(dcp) => {
                tracing::info!(encounter = %record.id, dcp = %dcp.id, correct = result.correct, "accrued");
                summary.created += 1;
            }
            ConsolidationOutcome::Skipped { reason } => {
                tracing::warn!(encounter = %record.id, %reason, "no DCP");
                summary.skipped += 1;
            }
        }
        let line = AccrualLine {
            encounter_id: record.id.clone(),
            status: result.status,
            correct: result.correct,
            steps_used: result.steps_used,
        };
        append_line(&log_path, &serde_json::to_string(&line).expect("log line serializes"))?;
        log.push(line);
        summary.processed += 1;
    }
    summary.repository_size = repo.len();
    if !log.is_empty() {
        summary.running_accuracy = Some(log.iter().filter(|l| l.correct).count() as f64 / log.len() as f64);
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub cohort: PathBuf,
    pub mode: Regime,
    pub repo: Option<String>,
    pub no_dcp: bool,
    pub no_guidelines: bool,
    pub no_pubmed: bool,
    pub snapshot: Option<usize>,
    pub workers: usize,
    pub out: Option<String>,
    pub script: Option<PathBuf>,
    /// Writes every prompt and reply of the run as a keyed script.
    pub record_script: Option<PathBuf>,
    pub exclude_backend_failures: bool,
    /// Replace an existing run directory.
    pub force: bool,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            cohort: PathBuf::new(),
            mode: Regime::Interactive,
            repo: None,
            no_dcp: false,
            no_guidelines: false,
            no_pubmed: false,
            snapshot: None,
            workers: 1,
            out: None,
            script: None,
            record_script: None,
            exclude_backend_failures: false,
            force: false,
        }
    }
}

impl EvaluateOptions {
    fn default_run_name(&self) -> String {
        let mut name = cohort_name(&self.cohort);
        match self.mode {
            Regime::FullInformation => name.push_str("-fi"),
            Regime::Interactive => {
                name.push_str("-interactive");
                if self.no_dcp {
                    name.push_str("-nodcp");
                }
                if let Some(k) = self.snapshot {
                    let _ = write!(name, "-k{k}");
                }
                if self.no_guidelines {
                    name.push_str("-noguidelines");
                }
                if self.no_pubmed {
                    name.push_str("-nopubmed");
                }
            }
        }
        name
    }
}

#[derive(Debug, Clone)]
pub struct EvaluationSummary {
    pub run_dir: PathBuf,
    pub report: EvaluationReport,
    pub backend_failures: usize,
}

/// Runs every encounter of an evaluation cohort under one regime and
/// writes per-encounter artifacts and the run report.
pub fn cmd_evaluate(ws: &Workspace, opts: &EvaluateOptions) -> Result<EvaluationSummary, WorkspaceError> {
    if opts.workers == 0 {
        return Err(WorkspaceError::Config("--workers must be at least 1".into()));
    }
    let cfg = ws.config();
    let interactive = opts.mode == Regime::Interactive;
    let dcp_enabled = interactive && cfg.episode.dcp_enabled && !opts.no_dcp;
    if opts.snapshot.is_some() && !dcp_enabled {
        return Err(WorkspaceError::Config(
            "--snapshot needs experience retrieval enabled".into(),
        ));
    }
    let run_dir = ws.run_dir(&opts.out.clone().unwrap_or_else(|| opts.default_run_name()));
    if run_dir.exists() {
        if !opts.force {
            return Err(WorkspaceError::Config(format!(
                "run directory {} exists; pass --force to replace it",
                run_dir.display()
            )));
        }
        std::fs::remove_dir_all(&run_dir).map_err(|e| WorkspaceError::io(&run_dir, e))?;
    }

    let records = load_checked_cohort(ws, &opts.cohort, CohortRole::Evaluation)?;
    let vocab = ws.vocabulary()?;
    let packs = ws.rule_packs()?;
    let profile = ws.profile()?;

    let snapshot: Option<DcpSnapshot> = if dcp_enabled {
        let name = opts
            .repo
            .as_deref()
            .ok_or_else(|| WorkspaceError::Config("experience retrieval is enabled but no --repo was given".into()))?;
        let dir = ws.repo_dir(name);
        if !dir.join(EVENTS_FILE).is_file() {
            return Err(WorkspaceError::Config(format!(
                "repository `{name}` not found at {}",
                dir.display()
            )));
        }
        let repo = DcpRepository::open(&dir)?;
        Some(match opts.snapshot {
            Some(k) => repo.snapshot_at(k)?,
            None => repo.snapshot(),
        })
    } else {
        None
    };
    let embedder = if dcp_enabled || (interactive && !opts.no_guidelines && cfg.episode.guidelines_enabled) {
        Some(ws.embedder()?)
    } else {
        None
    };
    if let (Some(snap), Some(emb)) = (&snapshot, &embedder) {
        if let Some(tag) = snap.encoder_tag() {
            if tag != emb.tag() {
                return Err(WorkspaceError::Config(format!(
                    "repository encoder is `{tag}` but the configured embedder is `{}`",
                    emb.tag()
                )));
            }
        }
    }
    let guidelines_enabled = interactive && cfg.episode.guidelines_enabled && !opts.no_guidelines;
    let guidelines = match (&embedder, guidelines_enabled) {
        (Some(e), true) => Some(ws.guideline_searcher(e)?),
        _ => None,
    };
    let pubmed = if interactive && cfg.episode.pubmed_enabled && !opts.no_pubmed {
        ws.pubmed()?
    } else {
        None
    };

    let mut episode_cfg = cfg.episode.clone();
    episode_cfg.dcp_enabled = dcp_enabled;
    episode_cfg.guidelines_enabled = guidelines_enabled;
    episode_cfg.pubmed_enabled = pubmed.is_some();
    episode_cfg.snapshot_limit = opts.snapshot;

    let (backend, mode) = ws.text_backend(opts.script.as_deref())?;
    if mode == Some(ScriptMode::Sequence) && opts.workers > 1 {
        tracing::warn!("a sequence script under several workers replays in nondeterministic order");
    }
    let recorder = opts
        .record_script
        .as_ref()
        .map(|_| Arc::new(RecordingBackend::new(backend.clone())));
    let backend: Arc<dyn TextBackend> = match &recorder {
        Some(r) => r.clone(),
        None => backend,
    };
    let gateway = ws.gateway(backend, mode.is_some());

    let tools = Tools {
        vocab: &vocab,
        profile: &profile,
        rule_packs: &packs,
        experience: snapshot.as_ref(),
        embedder: embedder.as_ref().filter(|_| dcp_enabled),
        guidelines: guidelines.as_ref(),
        pubmed: pubmed.as_ref(),
    };
    let run_one = |record: &EncounterRecord| match opts.mode {
        Regime::Interactive => run_episode(record, &episode_cfg, tools, &gateway),
        Regime::FullInformation => run_full_information(record, &episode_cfg, &profile, &packs, &gateway),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| WorkspaceError::Config(format!("worker pool: {e}")))?;
    let results: Vec<EpisodeResult> =
        pool.install(|| records.par_iter().map(run_one).collect::<Result<Vec<_>, _>>())?;

    let enc_dir = run_dir.join(ENCOUNTERS_DIR);
    let mut retrievals = String::new();
    for r in &results {
        write_episode_artifacts(&enc_dir.join(file_safe(&r.encounter_id)), r)?;
        for e in &r.retrieval_events {
            retrievals.push_str(&serde_json::to_string(e).expect("event serializes"));
            retrievals.push('\n');
        }
    }
    write(&run_dir.join("retrievals.ndjson"), &retrievals)?;

    let run = RunInfo {
        regime: opts.mode,
        dcp_enabled,
        guidelines_enabled,
        pubmed_enabled: episode_cfg.pubmed_enabled,
        snapshot_k: opts.snapshot,
        exclude_backend_failures: opts.exclude_backend_failures,
        canon_version: vocab.canon.version().to_string(),
    };
    let report = build_report(run, &results, &records, &vocab, &packs)?;
    report.write_to(&run_dir)?;

    if let (Some(path), Some(rec)) = (&opts.record_script, &recorder) {
        rec.script().write(path).map_err(|e| WorkspaceError::io(path, e))?;
    }
    let backend_failures = results
        .iter()
        .filter(|r| r.status == EpisodeStatus::BackendFailure)
        .count();
    Ok(EvaluationSummary {
        run_dir,
        report,
        backend_failures,
    })
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub with_run: String,
    pub without_run: String,
    /// Run supplying burden footprints; defaults to `without_run`.
    pub baseline_run: Option<String>,
    pub repo: String,
    /// Inclusive exposure windows for retrieval usage; defaults to the
    /// whole repository.
    pub windows: Vec<(usize, usize)>,
    pub out: Option<String>,
}

/// Paired analysis of an experience run against its ablation.
pub fn cmd_analyze(ws: &Workspace, opts: &AnalyzeOptions) -> Result<(PathBuf, AnalysisReport), WorkspaceError> {
    let with = load_run_results(&ws.run_dir(&opts.with_run))?;
    let without = load_run_results(&ws.run_dir(&opts.without_run))?;
    let baseline = match &opts.baseline_run {
        Some(b) => load_run_results(&ws.run_dir(b))?,
        None => without.clone(),
    };
    let dir = ws.repo_dir(&opts.repo);
    if !dir.join(EVENTS_FILE).is_file() {
        return Err(WorkspaceError::Config(format!(
            "repository `{}` not found at {}",
            opts.repo,
            dir.display()
        )));
    }
    let repo = DcpRepository::open(&dir)?;
    let windows: Vec<RangeInclusive<usize>> = if opts.windows.is_empty() {
        if repo.is_empty() {
            Vec::new()
        } else {
            vec![1..=repo.len()]
        }
    } else {
        opts.windows.iter().map(|&(a, b)| a..=b).collect()
    };
    let report = analyze(
        &with,
        &without,
        &baseline,
        repo.dcps(),
        ws.config().analysis.footprint,
        &windows,
    )?;
    let out = ws.run_dir(
        &opts
            .out
            .clone()
            .unwrap_or_else(|| format!("analysis-{}-vs-{}", opts.with_run, opts.without_run)),
    );
    std::fs::create_dir_all(&out).map_err(|e| WorkspaceError::io(&out, e))?;
    report.write_to(&out)?;
    Ok((out, report))
}

fn open_existing_repo(ws: &Workspace, name: &str) -> Result<DcpRepository, WorkspaceError> {
    let dir = ws.repo_dir(name);
    if !dir.join(EVENTS_FILE).is_file() {
        return Err(WorkspaceError::Config(format!(
            "repository `{name}` not found at {}",
            dir.display()
        )));
    }
    Ok(DcpRepository::open(&dir)?)
}

pub fn cmd_dcp_list(ws: &Workspace, repo: &str, filter: &DcpFilter) -> Result<Vec<Dcp>, WorkspaceError> {
    Ok(open_existing_repo(ws, repo)?
        .list(filter)
        .into_iter()
        .cloned()
        .collect())
}

pub fn cmd_dcp_show(ws: &Workspace, repo: &str, id: &str) -> Result<Dcp, WorkspaceError> {
    let repo = open_existing_repo(ws, repo)?;
    repo.get(id)
        .cloned()
        .ok_or_else(|| crate::dcp::DcpError::NotFound(id.to_string()).into())
}

pub fn cmd_dcp_retract(ws: &Workspace, repo: &str, id: &str, reason: &str) -> Result<Dcp, WorkspaceError> {
    if reason.trim().is_empty() {
        return Err(WorkspaceError::Config("retraction needs a non-empty reason".into()));
    }
    let mut repo = open_existing_repo(ws, repo)?;
    Ok(repo.retract(id, reason, Utc::now())?.clone())
}

/// The three DCP fields followed by provenance lines.
pub fn render_dcp_details(d: &Dcp) -> String {
    let mut out = render_dcp(&DcpFields {
        pattern: d.pattern.clone(),
        ordering: d.ordering.clone(),
        decision: d.decision.clone(),
    });
    if !out.ends_with('\n') {
        out.push('\n');
    }
    let _ = writeln!(out, "\nid: {}", d.id);
    let _ = writeln!(out, "exposure index: {}", d.exposure_index);
    let _ = writeln!(out, "pathology: {}", d.pathology);
    let _ = writeln!(out, "source encounter: {}", d.source_encounter_id);
    let _ = writeln!(
        out,
        "source outcome: {}",
        if d.source_correct { "correct" } else { "incorrect" }
    );
    let _ = writeln!(out, "created: {}", d.created_at.to_rfc3339());
    if d.retracted {
        let _ = writeln!(out, "retracted: {}", d.retraction_reasons.join("; "));
    }
    out
}
