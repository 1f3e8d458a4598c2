use sha2::{Digest, Sha256};

use super::TrajectoryEntry;
use crate::gateway::{AuditLog, AuditRecord, Gateway, GenerationParams, Purpose};
use crate::protocol::{render_compaction_prompt, render_scratchpad, HistoryItem, ModelProfile};

/// Observations at or below this size are never compacted, and the
/// truncation fallback keeps this many characters.
pub const COMPACTION_FALLBACK_CHARS: usize = 600;

const KEEP_RECENT: usize = 2;

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Keeps the first and last `budget / 2` characters with a gap marker.
pub fn head_tail_truncate(text: &str, budget: usize) -> String {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= budget {
        return text.to_string();
    }
    let half = budget / 2;
    let head: String = chars[..half].iter().collect();
    let tail: String = chars[chars.len() - half..].iter().collect();
    format!("{}\n[...]\n{}", head.trim_end(), tail.trim_start())
}

pub(crate) fn scratchpad_len(entries: &[TrajectoryEntry]) -> usize {
    let items: Vec<HistoryItem<'_>> = entries
        .iter()
        .map(|e| HistoryItem {
            step: &e.step,
            observation: &e.context_observation,
        })
        .collect();
    render_scratchpad(&items).len()
}

/// When the rendered scratchpad exceeds `threshold` characters, replaces each
/// long observation older than the two most recent steps with a generated
/// summary. Thought and action lines are untouched. Returns whether anything
/// changed.
pub fn compact_history(
    entries: &mut [TrajectoryEntry],
    threshold: usize,
    gateway: &Gateway,
    profile: &ModelProfile,
    params: &GenerationParams,
    audit: &mut AuditLog,
) -> bool {
    if scratchpad_len(entries) <= threshold || entries.len() <= KEEP_RECENT {
        return false;
    }
    let eligible = entries.len() - KEEP_RECENT;
    let mut changed = false;
    for entry in entries[..eligible].iter_mut() {
        if entry.compacted || entry.context_observation.chars().count() <= COMPACTION_FALLBACK_CHARS {
            continue;
        }
        let original = entry.context_observation.clone();
        let tool = entry.step.action_name().unwrap_or("Tool").to_string();
        let bundle = render_compaction_prompt(&tool, &original, profile);
        let summary = gateway
            .generate(&bundle, params, Purpose::Compaction, audit)
            .ok()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty() && s.len() < original.len());
        let (replacement, fallback) = match summary {
            Some(s) => (s, false),
            None => (head_tail_truncate(&original, COMPACTION_FALLBACK_CHARS), true),
        };
        audit.push(AuditRecord::Compaction {
            step_index: entry.step_index,
            before_digest: digest(&original),
            after_digest: digest(&replacement),
            fallback,
        });
        entry.context_observation = replacement;
        entry.compacted = true;
        changed = true;
    }
    changed
}
