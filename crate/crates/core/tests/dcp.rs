use chrono::{TimeZone, Utc};
use dxagent::dcp::{
    dcp_id, ConsolidationOutcome, Consolidator, DcpError, DcpFilter, DcpRepository, NewDcp, StoreEvent, EVENTS_FILE,
    VECTORS_FILE,
};
use dxagent::encounter::{EncounterRecord, LabGating};
use dxagent::gateway::{AuditLog, Embedder, EmbeddingVector, Gateway, GenerationParams, ScriptedBackend};
use dxagent::protocol::{DcpFields, ModelProfiles};
use dxagent::runner::{Compliance, EpisodeResult, EpisodeStatus, Regime};

fn at(minute: u32) -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 1, 9, minute, 0).unwrap()
}

fn unit(values: &[f32]) -> EmbeddingVector {
    EmbeddingVector::normalized(values.to_vec()).unwrap()
}

fn new_dcp(i: usize, correct: bool, pathology: &str) -> NewDcp {
    NewDcp {
        fields: DcpFields {
            pattern: format!("pattern {i}"),
            ordering: format!("ordering {i}"),
            decision: format!("decision {i}"),
        },
        pathology: pathology.into(),
        source_correct: correct,
        source_encounter_id: format!("ACC-{i:02}"),
        created_at: at(i as u32),
    }
}

#[test]
fn exposure_indices_follow_insertion_order() {
    let mut repo = DcpRepository::in_memory();
    for i in 1..=3 {
        let d = repo
            .insert(new_dcp(i, i != 2, "appendicitis"), "t", unit(&[1.0, i as f32]))
            .unwrap();
        assert_eq!(d.exposure_index, i);
        assert_eq!(d.id, dcp_id(i));
    }
    assert_eq!(dcp_id(7), "dcp-000007");
    assert_eq!(repo.len(), 3);
}

#[test]
fn events_replay_after_reopen() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut repo = DcpRepository::open(dir.path()).unwrap();
        repo.insert(new_dcp(1, true, "appendicitis"), "t", unit(&[1.0, 0.0]))
            .unwrap();
        repo.record_skip("ACC-02", "unparseable", at(2)).unwrap();
        repo.insert(new_dcp(3, false, "pancreatitis"), "t", unit(&[0.0, 1.0]))
            .unwrap();
        repo.retract("dcp-000001", "duplicate of a later entry", at(4)).unwrap();
    }
    let repo = DcpRepository::open(dir.path()).unwrap();
    assert_eq!(repo.len(), 2);
    assert_eq!(repo.encoder_tag(), Some("t"));
    let first = repo.get("dcp-000001").unwrap();
    assert!(first.retracted);
    let second = repo.get("dcp-000002").unwrap();
    assert_eq!(second.exposure_index, 2, "a skip consumes no exposure index");
    assert_eq!(second.source_encounter_id, "ACC-03");
    assert!(!second.source_correct);
    assert_eq!(repo.vector("dcp-000002").unwrap(), &unit(&[0.0, 1.0]));
    assert_eq!(repo.skips().len(), 1);
    let processed: Vec<&str> = repo.processed_encounters().collect();
    assert_eq!(processed.len(), 3);
    assert!(processed.contains(&"ACC-02"));

    let text = std::fs::read_to_string(dir.path().join(EVENTS_FILE)).unwrap();
    let events: Vec<StoreEvent> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events.len(), 4);
    assert!(matches!(events[3], StoreEvent::Retract { .. }));
    assert!(dir.path().join(VECTORS_FILE).exists());
}

#[test]
fn corrupt_event_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut repo = DcpRepository::open(dir.path()).unwrap();
        repo.insert(new_dcp(1, true, "appendicitis"), "t", unit(&[1.0, 0.0]))
            .unwrap();
    }
    let path = dir.path().join(EVENTS_FILE);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&path, text).unwrap();
    let err = DcpRepository::open(dir.path()).unwrap_err();
    assert!(matches!(err, DcpError::Corrupt { line: 2, .. }), "{err}");
}

#[test]
fn insert_rejects_mismatched_encoder_and_dimension() {
    let mut repo = DcpRepository::in_memory();
    repo.insert(new_dcp(1, true, "appendicitis"), "t", unit(&[1.0, 0.0]))
        .unwrap();
    let err = repo
        .insert(new_dcp(2, true, "appendicitis"), "other", unit(&[1.0, 0.0]))
        .unwrap_err();
    assert!(matches!(err, DcpError::EncoderMismatch { .. }));
    let err = repo
        .insert(new_dcp(2, true, "appendicitis"), "t", unit(&[1.0, 0.0, 0.0]))
        .unwrap_err();
    assert!(matches!(err, DcpError::Dimension { expected: 2, got: 3 }));
    assert_eq!(repo.len(), 1);
}

#[test]
fn snapshots_are_nested_and_hide_retracted() {
    let mut repo = DcpRepository::in_memory();
    repo.insert(new_dcp(1, true, "appendicitis"), "t", unit(&[1.0, 0.0]))
        .unwrap();
    repo.insert(new_dcp(2, false, "appendicitis"), "t", unit(&[0.9, 0.1]))
        .unwrap();
    repo.insert(new_dcp(3, true, "appendicitis"), "t", unit(&[0.0, 1.0]))
        .unwrap();
    repo.retract("dcp-000002", "wrong lesson", at(9)).unwrap();

    let q = unit(&[1.0, 0.0]);
    let s1 = repo.snapshot_at(1).unwrap();
    assert_eq!(s1.limit(), 1);
    let hits: Vec<String> = s1
        .retrieve_vector(&q, 3, -1.0)
        .unwrap()
        .into_iter()
        .map(|h| h.dcp.id)
        .collect();
    assert_eq!(hits, ["dcp-000001"]);

    let all = repo.snapshot_at(3).unwrap();
    let hits: Vec<String> = all
        .retrieve_vector(&q, 3, -1.0)
        .unwrap()
        .into_iter()
        .map(|h| h.dcp.id)
        .collect();
    assert_eq!(hits, ["dcp-000001", "dcp-000003"]);
    let floored = all.retrieve_vector(&q, 3, 0.2).unwrap();
    assert_eq!(floored.len(), 1, "orthogonal entry falls below the floor");
    assert!(matches!(all.retrieve_vector(&q, 0, 0.0), Err(DcpError::ZeroK)));
    assert!(matches!(repo.snapshot_at(4), Err(DcpError::Range { k: 4, size: 3 })));
    assert!(repo
        .snapshot_at(0)
        .unwrap()
        .retrieve_vector(&q, 3, -1.0)
        .unwrap()
        .is_empty());
}

#[test]
fn list_filters() {
    let mut repo = DcpRepository::in_memory();
    repo.insert(new_dcp(1, true, "appendicitis"), "t", unit(&[1.0, 0.0]))
        .unwrap();
    repo.insert(new_dcp(2, false, "pancreatitis"), "t", unit(&[0.0, 1.0]))
        .unwrap();
    repo.insert(new_dcp(3, false, "appendicitis"), "t", unit(&[1.0, 1.0]))
        .unwrap();
    repo.retract("dcp-000003", "superseded", at(5)).unwrap();

    let ids = |f: &DcpFilter| repo.list(f).into_iter().map(|d| d.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&DcpFilter::default()), ["dcp-000001", "dcp-000002"]);
    assert_eq!(ids(&DcpFilter::all()).len(), 3);
    let incorrect = DcpFilter {
        source_correct: Some(false),
        include_retracted: true,
        ..Default::default()
    };
    assert_eq!(ids(&incorrect), ["dcp-000002", "dcp-000003"]);
    let appendix = DcpFilter {
        pathology: Some("appendicitis".into()),
        ..Default::default()
    };
    assert_eq!(ids(&appendix), ["dcp-000001"]);
    assert!(matches!(
        repo.retract("dcp-000009", "x", at(6)),
        Err(DcpError::NotFound(_))
    ));
}

fn record() -> EncounterRecord {
    EncounterRecord {
        id: "ACC-01".into(),
        presenting_complaint: "Right lower quadrant pain for a day.".into(),
        physical_exam: Some("Guarding at McBurney point.".into()),
        labs: vec![],
        imaging: vec![],
        ground_truth: "Acute appendicitis".into(),
        pathology: "appendicitis".into(),
        clinician_orders: vec![],
        language_tag: "en".into(),
        lab_gating: LabGating::PerTest,
    }
}

fn episode(correct: bool) -> EpisodeResult {
    EpisodeResult {
        encounter_id: "ACC-01".into(),
        regime: Regime::Interactive,
        trajectory: vec![],
        final_diagnosis: Some("Acute appendicitis".into()),
        status: EpisodeStatus::Diagnosed,
        correct,
        steps_used: 1,
        repairs: 0,
        retrieval_events: vec![],
        workup_trace: vec![],
        compliance: Compliance::default(),
        failure: None,
        audit: AuditLog::new(),
    }
}

const GOOD: &str = "Experience Pattern: migratory right lower quadrant pain\n\
Test Ordering Experience: CBC and CRP, then Abdomen CT\n\
Diagnostic Decision Experience: localized guarding with leukocytosis";

fn consolidate(replies: &[&str], repo: &mut DcpRepository) -> Result<ConsolidationOutcome, DcpError> {
    let gateway = Gateway::scripted(ScriptedBackend::sequence(replies.iter().copied()));
    let embedder = Embedder::hashing(64);
    let profile = ModelProfiles::builtin().get("plain").unwrap().clone();
    let params = GenerationParams::default();
    let c = Consolidator {
        gateway: &gateway,
        embedder: &embedder,
        profile: &profile,
        params: &params,
    };
    c.consolidate(
        repo,
        &episode(false),
        &record(),
        "No process issues detected.",
        &mut AuditLog::new(),
        at(0),
    )
}

#[test]
fn consolidation_inserts_with_provenance() {
    let mut repo = DcpRepository::in_memory();
    let out = consolidate(&[GOOD], &mut repo).unwrap();
    let ConsolidationOutcome::Inserted(d) = out else {
        panic!("expected insert")
    };
    assert_eq!(d.pattern, "migratory right lower quadrant pain");
    assert!(!d.source_correct);
    assert_eq!(d.source_encounter_id, "ACC-01");
    assert_eq!(repo.encoder_tag(), Some(Embedder::hashing(64).tag().as_str()));
}

#[test]
fn consolidation_retries_once_then_skips() {
    let mut repo = DcpRepository::in_memory();
    let out = consolidate(&["nothing useful", GOOD], &mut repo).unwrap();
    assert!(matches!(out, ConsolidationOutcome::Inserted(_)));

    let mut repo = DcpRepository::in_memory();
    let out = consolidate(&["nothing useful", "still nothing"], &mut repo).unwrap();
    assert!(matches!(out, ConsolidationOutcome::Skipped { .. }));
    assert!(repo.is_empty());
    assert_eq!(repo.skips().len(), 1);
}

#[test]
fn consolidation_backend_failure_leaves_repository_unchanged() {
    let mut repo = DcpRepository::in_memory();
    let err = consolidate(&[], &mut repo).unwrap_err();
    assert!(matches!(err, DcpError::Gateway(_)));
    assert!(repo.is_empty() && repo.skips().is_empty());
}
