//! Acceptance suite: one pass/fail line per criterion.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use dxagent::dcp::{DcpFilter, DcpRepository, NewDcp};
use dxagent::encounter::{
    full_record_view, load_cohort, EncounterRecord, LabGating, LabelFirewall, Vocabulary, WorkupAction, WorkupType,
};
use dxagent::eval::{
    imaging_adherence_score, imaging_set_f1, improvement_cases, lab_adherence_score, lab_set_f1, learning_curve,
    order_concordance, pe_timing_score, provenance_enrichment, ConsistencyReport,
};
use dxagent::feedback::{ImagingSetting, RulePack, RulePackSet};
use dxagent::gateway::{EmbeddingVector, Gateway, GatewayError, GenerationParams, ScriptedBackend, TextBackend};
use dxagent::knowledge::{index_corpus, load_corpus, CannedEutils, GuidelineSearcher, PubMedClient, VectorIndex};
use dxagent::protocol::{
    parse_agent_step, parse_trace, render_full_information_prompt, render_trace, AgentStep, ModelProfiles,
    PromptBundle, StepKind,
};
use dxagent::runner::{run_episode, EpisodeConfig, EpisodeStatus, Regime, Tools, TOOL_UNAVAILABLE};
use dxagent::workspace::{cmd_accrue, cmd_evaluate, load_run_results, AccrueOptions, EvaluateOptions, Workspace};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fixture, selfevo_workspace};

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 protocol round-trip and parser fuzz", c1_protocol_round_trip),
        ("2 metric oracles", c2_metric_oracles),
        ("3 retrieval equals exhaustive cosine top-k", c3_retrieval_oracle),
        ("4 evidence gating and label firewall", c4_gating_and_firewall),
        ("5 step cap terminates as incorrect", c5_termination),
        ("6 self-evolution end to end", c6_self_evolution),
        ("7 snapshot semantics", c7_snapshot_semantics),
        ("8 ablation wiring", c8_ablation_wiring),
        ("9 replay reproducibility", c9_replay_reproducibility),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS  criterion {name} ({secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {name} ({secs:.2}s): {why}");
            }
        }
    }
    let _ = panic::take_hook();
    if failed > 0 {
        println!("{failed} of 9 acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}

// ---------------------------------------------------------------- criterion 1

fn load_trace_corpus() -> Vec<String> {
    let text = std::fs::read_to_string(fixture("traces.txt")).expect("trace corpus");
    let mut traces: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.starts_with("#### trace") {
            traces.push(String::new());
        } else if let Some(t) = traces.last_mut() {
            t.push_str(line);
            t.push('\n');
        }
    }
    traces
}

type Parsed = Vec<(AgentStep, Option<String>)>;

fn render_parsed(parsed: &Parsed) -> String {
    render_trace(parsed.iter().map(|(s, o)| (s, o.as_deref().unwrap_or(""))))
}

fn same_steps(a: &Parsed, b: &Parsed) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((sa, oa), (sb, ob))| {
            sa.kind == sb.kind && sa.thought == sb.thought && oa.as_deref().unwrap_or("") == ob.as_deref().unwrap_or("")
        })
}

fn c1_protocol_round_trip() -> Outcome {
    let start = Instant::now();
    let corpus = load_trace_corpus();
    ensure!(corpus.len() == 50, "expected 50 traces, found {}", corpus.len());
    for (i, trace) in corpus.iter().enumerate() {
        let first = parse_trace(trace);
        let expected_steps = trace
            .lines()
            .filter(|l| l.starts_with("Action: ") || l.starts_with("Final Diagnosis: "))
            .count();
        ensure!(
            first.len() == expected_steps,
            "trace {}: {} steps parsed, {expected_steps} expected",
            i + 1,
            first.len()
        );
        ensure!(
            first.iter().all(|(s, _)| !matches!(s.kind, StepKind::Malformed)),
            "trace {} has a malformed step",
            i + 1
        );
        let rendered = render_parsed(&first);
        let second = parse_trace(&rendered);
        ensure!(
            same_steps(&first, &second),
            "trace {}: parse-render-parse changed the steps",
            i + 1
        );
        ensure!(
            render_parsed(&second) == rendered,
            "trace {}: rendering is not stable",
            i + 1
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pieces = [
        "Thought:",
        "Action:",
        "Action Input:",
        "Observation:",
        "Final Diagnosis:",
        "\n",
        "\n\n",
        " ",
        "CT",
        "Lipase",
        "Physical Examination",
        "Imaging",
        "::",
        "\t",
        "é",
        "🙂",
        "\r\n",
        "thought:",
        "Action Input",
        "",
    ];
    for _ in 0..10_000 {
        let mut s = String::new();
        for _ in 0..rng.gen_range(0..24) {
            if rng.gen_bool(0.7) {
                s.push_str(pieces.choose(&mut rng).unwrap());
            } else {
                s.push(char::from_u32(rng.gen_range(0..0x2FF)).unwrap_or('?'));
            }
        }
        let step = parse_agent_step(&s);
        ensure!(step.raw == s, "raw text not preserved for {s:?}");
        match &step.kind {
            StepKind::ActionStep { .. } | StepKind::FinalStep { .. } | StepKind::Malformed => {}
        }
        let parsed = parse_trace(&s);
        let again = parse_trace(&render_parsed(&parsed));
        ensure!(
            same_steps(&parse_trace(&render_parsed(&again)), &again),
            "trace fixed point fails for {s:?}"
        );
    }
    ensure!(start.elapsed() < Duration::from_secs(5), "took {:?}", start.elapsed());
    Ok(())
}

// ---------------------------------------------------------------- criterion 2

/// Alias table written out by hand, independent of the bundled asset.
const LAB_ALIASES: &[(&str, &str)] = &[
    ("CBC", "CBC"),
    ("WBC", "CBC"),
    ("Hemoglobin", "CBC"),
    ("Platelets", "CBC"),
    ("CMP", "CMP"),
    ("Sodium", "CMP"),
    ("Creatinine", "CMP"),
    ("LFT", "LFT"),
    ("ALT", "LFT"),
    ("Total Bilirubin", "LFT"),
    ("Lipase", "Lipase"),
    ("Amylase", "Amylase"),
    ("CRP", "CRP"),
    ("Lactate", "Lactate"),
    ("Urinalysis", "Urinalysis"),
];
const MODALITY_ALIASES: &[(&str, &str)] = &[
    ("CT", "CT"),
    ("ct scan", "CT"),
    ("computed tomography", "CT"),
    ("Ultrasound", "Ultrasound"),
    ("US", "Ultrasound"),
    ("sonography", "Ultrasound"),
    ("MRI", "MRI"),
    ("magnetic resonance imaging", "MRI"),
];
const REGION_ALIASES: &[(&str, &str)] = &[
    ("Abdomen", "abdomen"),
    ("abdominal", "abdomen"),
    ("RUQ", "abdomen"),
    ("Chest", "chest"),
    ("thorax", "chest"),
    ("Pelvis", "pelvis"),
];

fn canon(table: &[(&str, &'static str)], name: &str) -> &'static str {
    table
        .iter()
        .find(|(a, _)| *a == name)
        .map(|(_, c)| *c)
        .expect("alias in table")
}

/// 2tp / (|A| + |B|) as an exact rational, evaluated once.
fn f1_oracle<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    fn dedup<T: PartialEq>(xs: &[T]) -> Vec<&T> {
        let mut out: Vec<&T> = Vec::new();
        for x in xs {
            if !out.contains(&x) {
                out.push(x);
            }
        }
        out
    }
    let (a, b) = (dedup(a), dedup(b));
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let tp = a.iter().filter(|x| b.contains(x)).count();
    (2 * tp) as f64 / (a.len() + b.len()) as f64
}

fn random_subset<R: Rng>(rng: &mut R, pool: &[(&'static str, &'static str)], max: usize) -> Vec<&'static str> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| pool.choose(rng).unwrap().0).collect()
}

fn pack(primary: &[&str], secondary: &[&str], preferred: &[(&str, &str)], acceptable: &[(&str, &str)]) -> RulePack {
    let setting = |&(m, r): &(&str, &str)| ImagingSetting {
        modality: m.to_string(),
        region: r.to_string(),
    };
    RulePack {
        pathology: "fixture".into(),
        synonyms: vec![],
        primary_labs: primary.iter().map(|s| s.to_string()).collect(),
        secondary_labs: secondary.iter().map(|s| s.to_string()).collect(),
        preferred_imaging: preferred.iter().map(setting).collect(),
        acceptable_imaging: acceptable.iter().map(setting).collect(),
        feedback_templates: BTreeMap::new(),
    }
}

fn lab_adherence_oracle(agent: &[&str], primary: &[&str], secondary: &[&str]) -> f64 {
    let set = |xs: &[&str]| xs.iter().map(|x| canon(LAB_ALIASES, x)).collect::<BTreeSet<_>>();
    let (agent, primary, secondary) = (set(agent), set(primary), set(secondary));
    if primary.is_empty() && secondary.is_empty() {
        return 100.0;
    }
    // Work in half units so every quantity is an integer.
    let primary_max = 2 * primary.len();
    let achieved = 2 * primary.intersection(&agent).count() + secondary.intersection(&agent).count().min(primary_max);
    let max_attainable = primary_max + secondary.len().min(primary_max);
    if max_attainable == 0 {
        return 100.0;
    }
    (100 * achieved) as f64 / max_attainable as f64
}

fn c2_metric_oracles() -> Outcome {
    let vocab = Vocabulary::builtin();
    let map = &vocab.canon;
    let types = [
        WorkupType::PhysicalExamination,
        WorkupType::Laboratory,
        WorkupType::Imaging,
    ];
    let key = |m: &str, r: &str| vocab.imaging_key(m, r);
    let (pe, lab, img) = (types[0], types[1], types[2]);

    // Worked examples.
    ensure!(
        lab_set_f1(&["CBC", "Lipase"], &["CBC", "Lipase", "CMP"], map) == 0.8,
        "lab F1 example"
    );
    ensure!(lab_set_f1(&["WBC"], &["CBC"], map) == 1.0, "lab F1 alias example");
    let us = key("Ultrasound", "Abdomen");
    let ct = key("CT", "Abdomen");
    ensure!(
        imaging_set_f1(&[ct.clone()].into(), &[us.clone()].into()) == 0.0,
        "imaging F1 mismatch"
    );
    ensure!(
        imaging_set_f1(&[us.clone(), ct].into(), &[us].into()) == 2.0 / 3.0,
        "imaging F1 example"
    );
    ensure!(
        order_concordance(&[lab, pe, img], &[pe, lab, img]) == 2.0 / 3.0,
        "concordance example"
    );
    ensure!(
        order_concordance(&[lab, pe], &[img, lab]) == 1.0,
        "concordance singleton intersection"
    );
    let p = pack(&["Lipase"], &["CBC", "CMP", "LFT"], &[], &[]);
    ensure!(
        lab_adherence_score(&["Lipase", "CBC"], &p, map) == 75.0,
        "lab adherence 75"
    );
    ensure!(
        lab_adherence_score(&["CBC", "CMP", "LFT"], &p, map) == 50.0,
        "lab adherence 50"
    );
    ensure!(
        lab_adherence_score(&["Lipase", "CBC", "CMP", "LFT"], &p, map) == 100.0,
        "lab adherence 100"
    );
    let pe_a = WorkupAction::PhysicalExamination;
    let lab_a = WorkupAction::LaboratoryTests {
        names: vec!["CBC".into()],
    };
    let img_a = |m: &str, r: &str| WorkupAction::Imaging {
        region: r.into(),
        modality: m.into(),
    };
    ensure!(
        pe_timing_score(&[pe_a.clone(), lab_a.clone(), img_a("CT", "Abdomen")]) == 100.0,
        "PE first"
    );
    ensure!(pe_timing_score(&[lab_a.clone(), pe_a.clone()]) == 50.0, "PE later");
    ensure!(
        pe_timing_score(&[lab_a.clone(), img_a("CT", "Abdomen")]) == 0.0,
        "PE absent"
    );
    let chole = RulePackSet::builtin()
        .get("cholecystitis")
        .map_err(|e| e.to_string())?
        .clone();
    ensure!(
        imaging_adherence_score(&[img_a("Ultrasound", "Abdomen")], &chole, &vocab) == 100.0,
        "preferred imaging"
    );
    ensure!(
        imaging_adherence_score(std::slice::from_ref(&lab_a), &chole, &vocab) == 0.0,
        "no imaging"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        // Lab set F1.
        let a = random_subset(&mut rng, LAB_ALIASES, 5);
        let b = random_subset(&mut rng, LAB_ALIASES, 5);
        let ca: Vec<&str> = a.iter().map(|x| canon(LAB_ALIASES, x)).collect();
        let cb: Vec<&str> = b.iter().map(|x| canon(LAB_ALIASES, x)).collect();
        let got = lab_set_f1(&a, &b, map);
        ensure!(got == f1_oracle(&ca, &cb), "lab F1 {a:?} vs {b:?}: {got}");

        // Imaging set F1.
        let pairs = |rng: &mut ChaCha8Rng| {
            let n = rng.gen_range(0..4);
            (0..n)
                .map(|_| {
                    (
                        MODALITY_ALIASES.choose(rng).unwrap().0,
                        REGION_ALIASES.choose(rng).unwrap().0,
                    )
                })
                .collect::<Vec<_>>()
        };
        let (pa, pb) = (pairs(&mut rng), pairs(&mut rng));
        let keys = |ps: &[(&str, &str)]| ps.iter().map(|(m, r)| key(m, r)).collect::<BTreeSet<_>>();
        let canon_pairs = |ps: &[(&str, &str)]| {
            ps.iter()
                .map(|(m, r)| (canon(MODALITY_ALIASES, m), canon(REGION_ALIASES, r)))
                .collect::<Vec<_>>()
        };
        let got = imaging_set_f1(&keys(&pa), &keys(&pb));
        ensure!(
            got == f1_oracle(&canon_pairs(&pa), &canon_pairs(&pb)),
            "imaging F1 {pa:?} vs {pb:?}: {got}"
        );

        // Order concordance by pair enumeration.
        let seq = |rng: &mut ChaCha8Rng| {
            let mut t = types.to_vec();
            t.shuffle(rng);
            t.truncate(rng.gen_range(0..=3));
            t
        };
        let (agent, reference) = (seq(&mut rng), seq(&mut rng));
        let shared: Vec<WorkupType> = reference.iter().copied().filter(|t| agent.contains(t)).collect();
        let expected = if shared.len() < 2 {
            1.0
        } else {
            let pos = |s: &[WorkupType], t| s.iter().position(|x| *x == t).unwrap();
            let (mut num, mut den) = (0, 0);
            for x in &shared {
                for y in &shared {
                    if pos(&reference, *x) < pos(&reference, *y) {
                        den += 1;
                        if pos(&agent, *x) < pos(&agent, *y) {
                            num += 1;
                        }
                    }
                }
            }
            num as f64 / den as f64
        };
        ensure!(
            order_concordance(&agent, &reference) == expected,
            "concordance {agent:?} vs {reference:?}"
        );

        // PE timing over random traces.
        let trace: Vec<WorkupAction> = (0..rng.gen_range(0..5))
            .map(|_| match rng.gen_range(0..3) {
                0 => pe_a.clone(),
                1 => lab_a.clone(),
                _ => img_a("CT", "Abdomen"),
            })
            .collect();
        let expected = match trace.first() {
            Some(WorkupAction::PhysicalExamination) => 100.0,
            _ if trace.contains(&pe_a) => 50.0,
            _ => 0.0,
        };
        ensure!(pe_timing_score(&trace) == expected, "PE timing {trace:?}");

        // Lab adherence against the half-unit formula.
        let primary = random_subset(&mut rng, LAB_ALIASES, 3);
        let secondary = random_subset(&mut rng, LAB_ALIASES, 4);
        let agent = random_subset(&mut rng, LAB_ALIASES, 6);
        let p = pack(&primary, &secondary, &[], &[]);
        let got = lab_adherence_score(&agent, &p, map);
        let want = lab_adherence_oracle(&agent, &primary, &secondary);
        ensure!(
            got == want,
            "lab adherence {agent:?} / {primary:?} / {secondary:?}: {got} vs {want}"
        );

        // Imaging adherence on the first imaging request only.
        let pick = |rng: &mut ChaCha8Rng| {
            (
                MODALITY_ALIASES.choose(rng).unwrap().0,
                REGION_ALIASES.choose(rng).unwrap().0,
            )
        };
        let preferred: Vec<(&str, &str)> = (0..rng.gen_range(0..3)).map(|_| pick(&mut rng)).collect();
        let acceptable: Vec<(&str, &str)> = (0..rng.gen_range(0..3)).map(|_| pick(&mut rng)).collect();
        let requests: Vec<(&str, &str)> = (0..rng.gen_range(0..3)).map(|_| pick(&mut rng)).collect();
        let mut trace = vec![lab_a.clone()];
        trace.extend(requests.iter().map(|(m, r)| img_a(m, r)));
        let cp = |x: &(&str, &str)| (canon(MODALITY_ALIASES, x.0), canon(REGION_ALIASES, x.1));
        let expected = match requests.first().map(cp) {
            Some(f) if preferred.iter().map(cp).any(|x| x == f) => 100.0,
            Some(f) if acceptable.iter().map(cp).any(|x| x == f) => 50.0,
            _ => 0.0,
        };
        let p = pack(&[], &[], &preferred, &acceptable);
        ensure!(
            imaging_adherence_score(&trace, &p, &vocab) == expected,
            "imaging adherence {requests:?}"
        );
    }

    // Cohort means.
    let reports: Vec<ConsistencyReport> = (0..150)
        .map(|_| {
            let mut v = || rng.gen_range(0..=12) as f64 / 12.0;
            ConsistencyReport::new(v(), v(), v(), v())
        })
        .collect();
    let mean = ConsistencyReport::mean(&reports).ok_or("empty mean")?;
    let n = reports.len() as f64;
    let m = |f: fn(&ConsistencyReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    for (got, want) in [
        (mean.pe_agreement, m(|r| r.pe_agreement)),
        (mean.lab_f1, m(|r| r.lab_f1)),
        (mean.imaging_f1, m(|r| r.imaging_f1)),
        (mean.order_concordance, m(|r| r.order_concordance)),
    ] {
        ensure!((got - want).abs() <= 1e-12, "mean {got} vs {want}");
    }
    Ok(())
}

// ---------------------------------------------------------------- criterion 3

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    loop {
        // Coarse values make exact ties frequent.
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-3i32..=3) as f32).collect();
        if let Some(e) = EmbeddingVector::normalized(v) {
            return e;
        }
    }
}

fn c3_retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let dim = if case % 2 == 0 { 8 } else { 64 };
        let size = rng.gen_range(1..=1000);
        let mut index = VectorIndex::new("oracle", dim);
        let mut entries = Vec::new();
        for i in 0..size {
            let v = if i > 0 && rng.gen_bool(0.1) {
                entries
                    .choose(&mut rng)
                    .map(|(_, v): &(String, EmbeddingVector)| v.clone())
                    .unwrap()
            } else {
                random_unit(&mut rng, dim)
            };
            let key = format!("k{:04}", rng.gen_range(0..100_000)) + &format!("-{i}");
            index.insert(key.clone(), v.clone(), "").map_err(|e| e.to_string())?;
            entries.push((key, v));
        }
        let query = random_unit(&mut rng, dim);
        let k = rng.gen_range(1..=size.min(20) + 2);
        let got: Vec<String> = index
            .search(&query, k)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|h| h.key)
            .collect();

        let mut scored: Vec<(f64, &str)> = entries
            .iter()
            .map(|(key, v)| {
                let mut dot = 0.0f64;
                for (a, b) in query.values().iter().zip(v.values()) {
                    dot += *a as f64 * *b as f64;
                }
                (dot.clamp(-1.0, 1.0), key.as_str())
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        let want: Vec<String> = scored.iter().take(k).map(|(_, key)| key.to_string()).collect();
        ensure!(
            got == want,
            "case {case} (dim {dim}, size {size}, k {k}): order differs"
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- criterion 4

/// Emits random tool calls, occasional malformed text and occasional
/// final diagnoses.
struct RandomAgent {
    rng: Mutex<ChaCha8Rng>,
}

const LAB_REQUESTS: &[&str] = &[
    "CBC",
    "WBC",
    "Lipase",
    "LFT",
    "ALT",
    "CRP",
    "Lactate",
    "Troponin",
    "hCG",
    "Urinalysis",
    "BMP",
    "Amylase",
    "Triglycerides",
    "Calcium",
    "Neutrophils",
];
const IMAGING_REQUESTS: &[&str] = &[
    "Abdomen CT",
    "Abdomen Ultrasound",
    "Right Upper Quadrant Ultrasound",
    "Pelvis Ultrasound",
    "Chest X-ray",
    "Abdomen MRCP",
    "Hepatobiliary HIDA",
    "modality=CT, region=Abdomen",
    "Head MRI",
];

impl TextBackend for RandomAgent {
    fn complete(&self, _bundle: &PromptBundle, _params: &GenerationParams) -> Result<String, GatewayError> {
        let mut rng = self.rng.lock().unwrap();
        let reply = match rng.gen_range(0..20) {
            0..=4 => " Examine.\nAction: Physical Examination\nAction Input: Physical Examination".to_string(),
            5..=10 => {
                let n = rng.gen_range(1..4);
                let names: Vec<&str> = (0..n).map(|_| *LAB_REQUESTS.choose(&mut *rng).unwrap()).collect();
                format!(" Labs.\nAction: Laboratory Tests\nAction Input: {}", names.join(", "))
            }
            11..=15 => format!(
                " Image.\nAction: Imaging\nAction Input: {}",
                IMAGING_REQUESTS.choose(&mut *rng).unwrap()
            ),
            16 => " Search.\nAction: Experience Search\nAction Input: abdominal pain".to_string(),
            17 => "no labels at all".to_string(),
            18 => " Unknown.\nAction: Biopsy\nAction Input: liver".to_string(),
            _ => " Done.\nFinal Diagnosis: Undifferentiated abdominal pain".to_string(),
        };
        Ok(reply)
    }

    fn name(&self) -> &str {
        "random-agent"
    }
}

fn firewall_for(packs: &RulePackSet) -> LabelFirewall {
    let mut fw = LabelFirewall::new();
    for p in packs.iter() {
        fw.add_synonyms(&p.pathology, &p.synonyms);
    }
    fw
}

/// Which evidence a lab request may disclose, decided from the alias table
/// and the record alone.
fn allowed_labs(record: &EncounterRecord, vocab: &Vocabulary, input: &str) -> BTreeSet<usize> {
    let names: Vec<&str> = input.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    (0..record.labs.len())
        .filter(|&i| match record.lab_gating {
            LabGating::Consolidated => !names.is_empty(),
            LabGating::PerTest => names.iter().any(|n| {
                vocab.canon.canonical(n) == vocab.canon.canonical(&record.labs[i].name)
                    || n.eq_ignore_ascii_case(&record.labs[i].name)
            }),
        })
        .collect()
}

fn allowed_imaging(record: &EncounterRecord, vocab: &Vocabulary, input: &str) -> BTreeSet<usize> {
    let Some((region, modality)) = vocab.imaging.split_request(input) else {
        return BTreeSet::new();
    };
    let wanted = vocab.imaging_key(&modality, &region);
    (0..record.imaging.len())
        .filter(|&i| vocab.imaging_key(&record.imaging[i].modality, &record.imaging[i].region) == wanted)
        .collect()
}

fn c4_gating_and_firewall() -> Outcome {
    let vocab = Vocabulary::builtin();
    let packs = RulePackSet::builtin();
    let firewall = firewall_for(&packs);
    let cohort = load_cohort(&fixture("cohort.jsonl"), &vocab, &firewall).map_err(|e| e.to_string())?;
    let profile = ModelProfiles::builtin()
        .get("plain")
        .map_err(|e| e.to_string())?
        .clone();
    let gateway = Gateway::new(Arc::new(RandomAgent {
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(4)),
    }));
    let config = EpisodeConfig {
        dcp_enabled: false,
        guidelines_enabled: false,
        pubmed_enabled: false,
        ..Default::default()
    };
    let tools = Tools {
        vocab: &vocab,
        profile: &profile,
        rule_packs: &packs,
        experience: None,
        embedder: None,
        guidelines: None,
        pubmed: None,
    };

    for record in &cohort {
        let view = full_record_view(record);
        ensure!(
            firewall.scan(record, &view).is_none(),
            "{}: full record view leaks a label",
            record.id
        );
        let prompt = render_full_information_prompt(&view, &[], &profile);
        ensure!(
            firewall.scan(record, &prompt.prompt).is_none(),
            "{}: FI prompt leaks a label",
            record.id
        );
    }

    let (mut lab_steps, mut imaging_steps) = (0, 0);
    for episode in 0..1000 {
        let record = &cohort[episode % cohort.len()];
        let result = run_episode(record, &config, tools, &gateway).map_err(|e| e.to_string())?;
        for entry in &result.trajectory {
            let obs = &entry.observation;
            ensure!(
                firewall.scan(record, obs).is_none(),
                "{}: observation leaks a label",
                record.id
            );
            let (name, input) = match &entry.step.kind {
                StepKind::ActionStep {
                    action_name,
                    action_input,
                } => (action_name.as_str(), action_input.as_str()),
                _ => ("", ""),
            };
            let labs_ok = if name == "Laboratory Tests" {
                lab_steps += 1;
                allowed_labs(record, &vocab, input)
            } else {
                BTreeSet::new()
            };
            let imaging_ok = if name == "Imaging" {
                imaging_steps += 1;
                allowed_imaging(record, &vocab, input)
            } else {
                BTreeSet::new()
            };
            for (i, l) in record.labs.iter().enumerate() {
                let line = format!("{}: {}", l.name, l.value);
                ensure!(
                    labs_ok.contains(&i) || !obs.contains(&line),
                    "{} step {}: unrequested lab `{line}` disclosed",
                    record.id,
                    entry.step_index
                );
            }
            for (i, im) in record.imaging.iter().enumerate() {
                ensure!(
                    imaging_ok.contains(&i) || !obs.contains(&im.report),
                    "{} step {}: unrequested imaging report disclosed",
                    record.id,
                    entry.step_index
                );
            }
            if name != "Physical Examination" {
                if let Some(pe) = &record.physical_exam {
                    ensure!(
                        !obs.contains(pe.as_str()),
                        "{}: physical exam disclosed without a request",
                        record.id
                    );
                }
            }
        }
    }
    ensure!(
        lab_steps > 1000 && imaging_steps > 1000,
        "random agent exercised too few requests"
    );
    Ok(())
}

// ---------------------------------------------------------------- criterion 5

fn c5_termination() -> Outcome {
    let vocab = Vocabulary::builtin();
    let packs = RulePackSet::builtin();
    let firewall = firewall_for(&packs);
    let cohort = load_cohort(&fixture("cohort.jsonl"), &vocab, &firewall).map_err(|e| e.to_string())?;
    let profile = ModelProfiles::builtin()
        .get("plain")
        .map_err(|e| e.to_string())?
        .clone();
    let config = EpisodeConfig {
        dcp_enabled: false,
        guidelines_enabled: false,
        pubmed_enabled: false,
        ..Default::default()
    };
    ensure!(config.max_steps == 20, "default step cap is {}", config.max_steps);
    let tools = Tools {
        vocab: &vocab,
        profile: &profile,
        rule_packs: &packs,
        experience: None,
        embedder: None,
        guidelines: None,
        pubmed: None,
    };
    let replies = [
        " Examine.\nAction: Physical Examination\nAction Input: Physical Examination",
        " Labs.\nAction: Laboratory Tests\nAction Input: CBC",
        "I am still thinking about this case.",
    ];
    for reply in replies {
        let gateway = Gateway::scripted(ScriptedBackend::sequence(std::iter::repeat_n(reply, 200)));
        let result = run_episode(&cohort[0], &config, tools, &gateway).map_err(|e| e.to_string())?;
        ensure!(
            result.status == EpisodeStatus::StepCapReached,
            "status {:?}",
            result.status
        );
        ensure!(result.steps_used == 20, "{} steps used", result.steps_used);
        ensure!(
            result.trajectory.len() == 20,
            "{} trajectory entries",
            result.trajectory.len()
        );
        ensure!(
            !result.correct && result.final_diagnosis.is_none(),
            "capped episode scored correct"
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- criterion 6

fn evaluate(ws: &Workspace, out: &str, no_dcp: bool, snapshot: Option<usize>) -> Result<f64, String> {
    let summary = cmd_evaluate(
        ws,
        &EvaluateOptions {
            cohort: ws.root().join("eval.jsonl"),
            mode: Regime::Interactive,
            repo: (!no_dcp).then(|| "main".to_string()),
            no_dcp,
            snapshot,
            out: Some(out.to_string()),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(summary.report.accuracy)
}

fn c6_self_evolution() -> Outcome {
    let start = Instant::now();
    let (_dir, ws) = selfevo_workspace();
    let summary = cmd_accrue(
        &ws,
        &AccrueOptions {
            cohort: ws.root().join("accrual.jsonl"),
            repo: "main".into(),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        summary.repository_size == 6,
        "repository holds {}",
        summary.repository_size
    );

    let curve = learning_curve(&[0, 6], summary.repository_size, |k| {
        evaluate(&ws, &format!("k{k}"), false, Some(k)).map_err(dxagent::eval::EvalError::Invalid)
    })
    .map_err(|e| e.to_string())?;
    ensure!(curve[0].accuracy == 0.5, "accuracy at k=0 is {}", curve[0].accuracy);
    ensure!(curve[1].accuracy == 0.75, "accuracy at k=6 is {}", curve[1].accuracy);

    evaluate(&ws, "nodcp", true, None)?;
    let with = load_run_results(&ws.run_dir("k6")).map_err(|e| e.to_string())?;
    let without = load_run_results(&ws.run_dir("nodcp")).map_err(|e| e.to_string())?;
    let cases = improvement_cases(&with, &without).map_err(|e| e.to_string())?;
    ensure!(
        cases == BTreeSet::from(["EVL-03".to_string()]),
        "improvement cases {cases:?}"
    );

    let repo = DcpRepository::open(&ws.repo_dir("main")).map_err(|e| e.to_string())?;
    let planted = repo
        .list(&DcpFilter::all())
        .into_iter()
        .find(|d| d.source_encounter_id == "ACC-04")
        .ok_or("planted DCP missing")?;
    ensure!(
        !planted.source_correct,
        "planted DCP should descend from an incorrect episode"
    );
    let events: Vec<_> = with.iter().flat_map(|r| r.retrieval_events.clone()).collect();
    let dcps: Vec<_> = repo.dcps().to_vec();
    let enrichment = provenance_enrichment(&events, &cases, &dcps).map_err(|e| e.to_string())?;
    ensure!(
        enrichment.rate_improvement == Some(1.0),
        "improvement rate {:?}",
        enrichment.rate_improvement
    );
    ensure!(start.elapsed() < Duration::from_secs(30), "took {:?}", start.elapsed());
    Ok(())
}

// ---------------------------------------------------------------- criterion 7

#[derive(Debug, Clone)]
enum Op {
    Insert { correct: bool, dir: u8 },
    Retract(usize),
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (any::<bool>(), 0u8..4).prop_map(|(correct, dir)| Op::Insert { correct, dir }),
        1 => (0usize..64).prop_map(Op::Retract),
    ]
}

fn fields(i: usize) -> dxagent::protocol::DcpFields {
    dxagent::protocol::DcpFields {
        pattern: format!("pattern {i}"),
        ordering: format!("ordering {i}"),
        decision: format!("decision {i}"),
    }
}

fn c7_snapshot_semantics() -> Outcome {
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 256,
        ..ProptestConfig::default()
    });
    let at = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
    runner
        .run(&prop::collection::vec(op_strategy(), 0..40), |ops| {
            let mut repo = DcpRepository::in_memory();
            let mut retracted = BTreeSet::new();
            for (i, op) in ops.iter().enumerate() {
                match *op {
                    Op::Insert { correct, dir } => {
                        let mut v = vec![0.1f32; 4];
                        v[dir as usize] = 1.0;
                        let new = NewDcp {
                            fields: fields(i),
                            pathology: "appendicitis".into(),
                            source_correct: correct,
                            source_encounter_id: format!("enc-{i}"),
                            created_at: at,
                        };
                        repo.insert(new, "fixed-4", EmbeddingVector::normalized(v).unwrap())
                            .unwrap();
                    }
                    Op::Retract(j) if !repo.is_empty() => {
                        let id = repo.dcps()[j % repo.len()].id.clone();
                        if retracted.insert(id.clone()) {
                            repo.retract(&id, "curation", at).unwrap();
                        }
                    }
                    Op::Retract(_) => {}
                }
            }
            let n = repo.len();
            let exposures: Vec<usize> = repo.dcps().iter().map(|d| d.exposure_index).collect();
            prop_assert_eq!(exposures, (1..=n).collect::<Vec<_>>());
            let ids =
                |k: usize| -> BTreeSet<String> { repo.snapshot_at(k).unwrap().ids().map(str::to_string).collect() };
            for k in 0..n {
                prop_assert!(ids(k).is_subset(&ids(k + 1)));
            }
            prop_assert!(repo.snapshot_at(n + 1).is_err());
            for dir in 0..4 {
                let mut q = vec![0.1f32; 4];
                q[dir] = 1.0;
                let q = EmbeddingVector::normalized(q).unwrap();
                for k in 0..=n {
                    let hits = repo
                        .snapshot_at(k)
                        .unwrap()
                        .retrieve_vector(&q, n.max(1), -1.0)
                        .unwrap();
                    for h in &hits {
                        prop_assert!(!retracted.contains(&h.dcp.id));
                        prop_assert!(h.dcp.exposure_index <= k);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- criterion 8

fn c8_ablation_wiring() -> Outcome {
    // Experience off through the operator command.
    let (_dir, ws) = selfevo_workspace();
    cmd_accrue(
        &ws,
        &AccrueOptions {
            cohort: ws.root().join("accrual.jsonl"),
            repo: "main".into(),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    evaluate(&ws, "nodcp", true, None)?;
    let results = load_run_results(&ws.run_dir("nodcp")).map_err(|e| e.to_string())?;
    let mut searches = 0;
    for r in &results {
        ensure!(
            r.retrieval_events.is_empty(),
            "{}: retrieval events without DCP",
            r.encounter_id
        );
        for e in &r.trajectory {
            if matches!(&e.step.kind, StepKind::ActionStep { action_name, .. } if action_name == "Experience Search") {
                searches += 1;
                ensure!(
                    e.observation == TOOL_UNAVAILABLE,
                    "{}: experience observation {:?}",
                    r.encounter_id,
                    e.observation
                );
            }
        }
    }
    ensure!(
        searches == results.len(),
        "expected one experience search per episode, saw {searches}"
    );

    // Guideline and PubMed tools, each checked enabled and disabled.
    let vocab = Vocabulary::builtin();
    let packs = RulePackSet::builtin();
    let firewall = firewall_for(&packs);
    let cohort = load_cohort(&fixture("cohort.jsonl"), &vocab, &firewall).map_err(|e| e.to_string())?;
    let profile = ModelProfiles::builtin()
        .get("plain")
        .map_err(|e| e.to_string())?
        .clone();
    let embedder = dxagent::gateway::Embedder::hashing(256);
    let docs = load_corpus(&fixture("guidelines")).map_err(|e| e.to_string())?;
    let index = index_corpus(&docs, &Default::default(), &embedder).map_err(|e| e.to_string())?;
    let guidelines =
        GuidelineSearcher::new(Some(index), embedder.clone(), Default::default()).map_err(|e| e.to_string())?;
    let pubmed = PubMedClient::new(
        Arc::new(CannedEutils::from_file(&fixture("pubmed.json")).map_err(|e| e.to_string())?),
        3,
    );
    let snapshot = DcpRepository::in_memory().snapshot();
    let tools = Tools {
        vocab: &vocab,
        profile: &profile,
        rule_packs: &packs,
        experience: Some(&snapshot),
        embedder: Some(&embedder),
        guidelines: Some(&guidelines),
        pubmed: Some(&pubmed),
    };
    let replies = [
        " Guidance.\nAction: Guideline Search\nAction Input: first line imaging for right upper quadrant pain",
        " Literature.\nAction: PubMed Search\nAction Input: lipase threshold epigastric pain",
        " Experience.\nAction: Experience Search\nAction Input: epigastric pain",
        " Done.\nFinal Diagnosis: Acute appendicitis",
    ];
    for (dcp, gl, pm) in [(false, false, false), (true, true, true)] {
        let config = EpisodeConfig {
            dcp_enabled: dcp,
            guidelines_enabled: gl,
            pubmed_enabled: pm,
            ..Default::default()
        };
        let gateway = Gateway::scripted(ScriptedBackend::sequence(replies));
        let r = run_episode(&cohort[0], &config, tools, &gateway).map_err(|e| e.to_string())?;
        let obs: Vec<&str> = r.trajectory.iter().map(|e| e.observation.as_str()).collect();
        if !dcp {
            ensure!(
                obs[..3].iter().all(|o| *o == TOOL_UNAVAILABLE),
                "disabled tools answered: {obs:?}"
            );
            ensure!(r.retrieval_events.is_empty(), "retrieval logged while disabled");
        } else {
            ensure!(
                obs[0].contains("Ultrasound of the right upper quadrant"),
                "guideline hit missing: {}",
                obs[0]
            );
            ensure!(obs[1].contains("Lipase thresholds"), "PubMed hit missing: {}", obs[1]);
            ensure!(
                obs[2] != TOOL_UNAVAILABLE && r.retrieval_events.len() == 1,
                "experience search not wired"
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- criterion 9

fn c9_replay_reproducibility() -> Outcome {
    let (_dir, ws) = selfevo_workspace();
    cmd_accrue(
        &ws,
        &AccrueOptions {
            cohort: ws.root().join("accrual.jsonl"),
            repo: "main".into(),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for (out, workers) in [("first", 1), ("second", 3)] {
        let summary = cmd_evaluate(
            &ws,
            &EvaluateOptions {
                cohort: ws.root().join("eval.jsonl"),
                repo: Some("main".into()),
                workers,
                out: Some(out.into()),
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        reports.push(std::fs::read(summary.run_dir.join("report.json")).map_err(|e| e.to_string())?);
    }
    ensure!(!reports[0].is_empty(), "empty report");
    ensure!(reports[0] == reports[1], "report.json differs between runs");
    Ok(())
}
