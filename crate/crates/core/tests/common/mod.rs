#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dxagent::workspace::Workspace;
use tempfile::TempDir;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Fresh workspace holding a copy of the self-evolution fixture.
pub fn selfevo_workspace() -> (TempDir, Workspace) {
    let dir = tempfile::tempdir().expect("tempdir");
    for name in ["accrual.jsonl", "eval.jsonl", "script.json", "dxagent.toml"] {
        std::fs::copy(fixture("selfevo").join(name), dir.path().join(name)).expect("copy fixture");
    }
    let ws = Workspace::open(dir.path()).expect("open workspace");
    (dir, ws)
}
