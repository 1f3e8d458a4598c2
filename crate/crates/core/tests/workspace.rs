mod common;

use dxagent::dcp::DcpFilter;
use dxagent::eval::{ANALYSIS_FILE, REPORT_FILE};
use dxagent::runner::Regime;
use dxagent::workspace::{
    cmd_accrue, cmd_analyze, cmd_dcp_list, cmd_dcp_retract, cmd_dcp_show, cmd_evaluate, cmd_index_guidelines,
    cmd_validate, load_run_results, render_dcp_details, AccrueOptions, AnalyzeOptions, EvaluateOptions, Workspace,
    WorkspaceError, ACCRUAL_LOG,
};

use common::{fixture, selfevo_workspace};

fn accrue(ws: &Workspace, limit: Option<usize>) -> dxagent::workspace::AccrualSummary {
    cmd_accrue(
        ws,
        &AccrueOptions {
            cohort: ws.root().join("accrual.jsonl"),
            repo: "main".into(),
            limit,
            ..Default::default()
        },
    )
    .unwrap()
}

fn eval_opts(ws: &Workspace, out: &str) -> EvaluateOptions {
    EvaluateOptions {
        cohort: ws.root().join("eval.jsonl"),
        repo: Some("main".into()),
        out: Some(out.into()),
        ..Default::default()
    }
}

#[test]
fn validate_reports_leaks() {
    let (_dir, ws) = selfevo_workspace();
    let clean = cmd_validate(&ws, &fixture("cohort.jsonl")).unwrap();
    assert!(clean.is_clean(), "{:?}", clean.problems);
    assert_eq!(clean.records, 8);

    let leaking = cmd_validate(&ws, &fixture("leaking.jsonl")).unwrap();
    assert_eq!(leaking.problems.len(), 2, "{:?}", leaking.problems);
    assert!(leaking.problems.iter().any(|p| p.contains("FX-002")));
    assert!(leaking.problems.iter().any(|p| p.contains("FX-003")));
}

#[test]
fn loading_a_leaking_cohort_is_a_validation_error() {
    let (dir, ws) = selfevo_workspace();
    std::fs::copy(fixture("leaking.jsonl"), dir.path().join("leaking.jsonl")).unwrap();
    let err = cmd_evaluate(
        &ws,
        &EvaluateOptions {
            cohort: dir.path().join("leaking.jsonl"),
            no_dcp: true,
            ..Default::default()
        },
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn overlapping_cohorts_are_refused() {
    let (dir, ws) = selfevo_workspace();
    accrue(&ws, Some(1));
    std::fs::copy(dir.path().join("accrual.jsonl"), dir.path().join("holdout.jsonl")).unwrap();
    let err = cmd_evaluate(
        &ws,
        &EvaluateOptions {
            cohort: dir.path().join("holdout.jsonl"),
            no_dcp: true,
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, WorkspaceError::Governance(_)), "{err}");
    assert_eq!(err.exit_code(), 3);

    let err = cmd_accrue(
        &ws,
        &AccrueOptions {
            cohort: dir.path().join("eval.jsonl"),
            repo: "main".into(),
            ..Default::default()
        },
    );
    assert!(err.is_ok(), "an unregistered cohort may accrue");
    let err = cmd_evaluate(&ws, &eval_opts(&ws, "late")).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn accrual_resumes_where_it_stopped() {
    let (_dir, ws) = selfevo_workspace();
    let first = accrue(&ws, Some(2));
    assert_eq!(
        (first.processed, first.already_processed, first.repository_size),
        (2, 0, 2)
    );
    let rest = accrue(&ws, None);
    assert_eq!(
        (rest.processed, rest.already_processed, rest.repository_size),
        (4, 2, 6)
    );
    assert_eq!(rest.running_accuracy, Some(4.0 / 6.0));
    let again = accrue(&ws, None);
    assert_eq!((again.processed, again.already_processed), (0, 6));

    let log = std::fs::read_to_string(ws.repo_dir("main").join(ACCRUAL_LOG)).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(ws.repo_dir("main").join("episodes/ACC-04/result.json").is_file());
    let ids: Vec<String> = cmd_dcp_list(&ws, "main", &DcpFilter::default())
        .unwrap()
        .into_iter()
        .map(|d| d.source_encounter_id)
        .collect();
    assert_eq!(ids, ["ACC-01", "ACC-02", "ACC-03", "ACC-04", "ACC-05", "ACC-06"]);
}

#[test]
fn retracted_dcp_is_not_retrieved() {
    let (_dir, ws) = selfevo_workspace();
    accrue(&ws, None);
    let planted = cmd_dcp_list(
        &ws,
        "main",
        &DcpFilter {
            source_correct: Some(false),
            ..Default::default()
        },
    )
    .unwrap()
    .into_iter()
    .find(|d| d.source_encounter_id == "ACC-04")
    .unwrap();
    let shown = render_dcp_details(&cmd_dcp_show(&ws, "main", &planted.id).unwrap());
    assert!(shown.contains(&planted.id) && shown.contains("ACC-04"));

    let before = cmd_evaluate(&ws, &eval_opts(&ws, "before")).unwrap();
    cmd_dcp_retract(&ws, "main", &planted.id, "contradicts current practice").unwrap();
    assert!(cmd_dcp_show(&ws, "main", &planted.id).unwrap().retracted);
    let after = cmd_evaluate(&ws, &eval_opts(&ws, "after")).unwrap();

    let hits = |run: &str| -> Vec<String> {
        load_run_results(&ws.run_dir(run))
            .unwrap()
            .iter()
            .flat_map(|r| {
                r.retrieval_events
                    .iter()
                    .flat_map(|e| e.returned.iter().map(|h| h.dcp_id.clone()))
            })
            .collect()
    };
    assert!(hits("before").contains(&planted.id));
    assert!(!hits("after").contains(&planted.id));
    assert!(after.report.accuracy < before.report.accuracy);
    assert!(cmd_dcp_retract(&ws, "main", "dcp-999999", "x").is_err());
}

#[test]
fn existing_run_needs_force() {
    let (_dir, ws) = selfevo_workspace();
    accrue(&ws, None);
    cmd_evaluate(&ws, &eval_opts(&ws, "r")).unwrap();
    let err = cmd_evaluate(&ws, &eval_opts(&ws, "r")).unwrap_err();
    assert!(err.to_string().contains("--force"), "{err}");
    let forced = EvaluateOptions {
        force: true,
        ..eval_opts(&ws, "r")
    };
    cmd_evaluate(&ws, &forced).unwrap();
}

#[test]
fn evaluation_needs_a_repository_when_retrieval_is_on() {
    let (_dir, ws) = selfevo_workspace();
    let opts = EvaluateOptions {
        repo: None,
        ..eval_opts(&ws, "x")
    };
    assert!(cmd_evaluate(&ws, &opts).is_err());
    let opts = EvaluateOptions {
        no_dcp: true,
        snapshot: Some(1),
        ..eval_opts(&ws, "y")
    };
    assert!(cmd_evaluate(&ws, &opts).is_err(), "--snapshot without retrieval");
}

#[test]
fn analysis_writes_its_outputs() {
    let (_dir, ws) = selfevo_workspace();
    accrue(&ws, None);
    cmd_evaluate(&ws, &eval_opts(&ws, "with")).unwrap();
    cmd_evaluate(
        &ws,
        &EvaluateOptions {
            no_dcp: true,
            ..eval_opts(&ws, "without")
        },
    )
    .unwrap();
    let (out, report) = cmd_analyze(
        &ws,
        &AnalyzeOptions {
            with_run: "with".into(),
            without_run: "without".into(),
            repo: "main".into(),
            windows: vec![(1, 3), (4, 6)],
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(report.improvement_cases.iter().collect::<Vec<_>>(), ["EVL-03"]);
    assert_eq!(report.provenance.rate_improvement, Some(1.0));
    assert_eq!(report.retrieval_usage.len(), 2);
    assert!(out.join(ANALYSIS_FILE).is_file());
    assert!(out.join("improvement_cases.tsv").is_file());
    assert!(ws.run_dir("with").join(REPORT_FILE).is_file());
    assert!(ws.run_dir("with").join("retrievals.ndjson").is_file());
    assert!(ws.run_dir("with").join("encounters/EVL-03/trajectory.ndjson").is_file());
}

#[test]
fn recorded_script_replays_to_the_same_report() {
    let (dir, ws) = selfevo_workspace();
    accrue(&ws, None);
    let recorded = dir.path().join("recorded.json");
    let first = cmd_evaluate(
        &ws,
        &EvaluateOptions {
            record_script: Some(recorded.clone()),
            ..eval_opts(&ws, "recorded")
        },
    )
    .unwrap();
    let replay = cmd_evaluate(
        &ws,
        &EvaluateOptions {
            script: Some(recorded),
            workers: 2,
            ..eval_opts(&ws, "replayed")
        },
    )
    .unwrap();
    let read = |p: &std::path::Path| std::fs::read(p.join(REPORT_FILE)).unwrap();
    assert_eq!(read(&first.run_dir), read(&replay.run_dir));
}

#[test]
fn guideline_index_and_full_information_mode() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("cohort.jsonl"), dir.path().join("cohort.jsonl")).unwrap();
    let reply = serde_json::json!({"reply": " All data reviewed.\nFinal Diagnosis: Acute appendicitis"});
    let script = serde_json::json!({"mode": "sequence", "entries": vec![reply; 8]});
    std::fs::write(dir.path().join("fi.json"), script.to_string()).unwrap();
    std::fs::write(
        dir.path().join("dxagent.toml"),
        "[backend]\nscript = \"fi.json\"\n\n[embedder]\ndimension = 256\n",
    )
    .unwrap();
    let ws = Workspace::open(dir.path()).unwrap();

    let (index, chunks) = cmd_index_guidelines(&ws, Some(&fixture("guidelines"))).unwrap();
    assert!(index.is_file());
    assert!(chunks >= 3);
    let searcher = ws.guideline_searcher(&ws.embedder().unwrap()).unwrap();
    assert!(searcher.is_available());
    let ranked = searcher
        .ranked("serum lipase above three times the upper limit")
        .unwrap();
    assert_eq!(ranked[0].0, "pancreas-labs");
    assert!(searcher
        .search("serum lipase")
        .contains("Laboratory diagnosis of acute pancreatic inflammation"));

    let s = cmd_evaluate(
        &ws,
        &EvaluateOptions {
            cohort: dir.path().join("cohort.jsonl"),
            mode: Regime::FullInformation,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(s.run_dir.ends_with("cohort-fi"));
    assert_eq!(s.report.encounters, 8);
    assert_eq!(s.report.accuracy, 0.25, "two of eight encounters are appendicitis");
    assert_eq!(s.backend_failures, 0);
}
