use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{GatewayError, GenerationParams, TextBackend};
use crate::protocol::PromptBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMode {
    Sequence,
    Keyed,
}

/// One scripted reply. In keyed mode an entry matches by exact prompt
/// digest, or else by every `contains` fragment occurring in the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFile {
    pub mode: ScriptMode,
    pub entries: Vec<ScriptEntry>,
}

impl ScriptFile {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("script serializes");
        std::fs::write(path, text + "\n")
    }
}

/// Deterministic replay backend.
///
/// Sequence scripts hand out replies in order across all callers, so they
/// are only deterministic for single-worker runs.
#[derive(Debug)]
pub struct ScriptedBackend {
    mode: ScriptMode,
    by_digest: BTreeMap<String, String>,
    rules: Vec<ScriptEntry>,
    queue: Vec<String>,
    cursor: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_script(ScriptFile {
            mode: ScriptMode::Sequence,
            entries: replies
                .into_iter()
                .map(|r| ScriptEntry {
                    reply: r.into(),
                    ..Default::default()
                })
                .collect(),
        })
        .expect("sequence script is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("reading script {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let script: ScriptFile =
            serde_json::from_str(text).map_err(|e| GatewayError::Config(format!("script file: {e}")))?;
        Self::from_script(script)
    }

    pub fn from_script(script: ScriptFile) -> Result<Self, GatewayError> {
        let mut by_digest = BTreeMap::new();
        let mut rules = Vec::new();
        let mut queue = Vec::new();
        for (i, entry) in script.entries.into_iter().enumerate() {
            match script.mode {
                ScriptMode::Sequence => queue.push(entry.reply),
                ScriptMode::Keyed => match &entry.digest {
                    Some(d) => {
                        if by_digest.insert(d.to_ascii_lowercase(), entry.reply.clone()).is_some() {
                            return Err(GatewayError::Config(format!("script entry {i}: duplicate digest {d}")));
                        }
                    }
                    None => rules.push(entry),
                },
            }
        }
        Ok(Self {
            mode: script.mode,
            by_digest,
            rules,
            queue,
            cursor: Mutex::new(0),
        })
    }

    pub fn mode(&self) -> ScriptMode {
        self.mode
    }
}

impl TextBackend for ScriptedBackend {
    fn complete(&self, bundle: &PromptBundle, _params: &GenerationParams) -> Result<String, GatewayError> {
        match self.mode {
            ScriptMode::Sequence => {
                let mut cursor = self.cursor.lock().expect("script cursor poisoned");
                let reply = self
                    .queue
                    .get(*cursor)
                    .cloned()
                    .ok_or(GatewayError::ScriptExhausted { served: *cursor })?;
                *cursor += 1;
                Ok(reply)
            }
            ScriptMode::Keyed => {
                let digest = bundle.digest();
                if let Some(reply) = self.by_digest.get(&digest) {
                    return Ok(reply.clone());
                }
                self.rules
                    .iter()
                    .find(|r| r.contains.iter().all(|frag| bundle.prompt.contains(frag.as_str())))
                    .map(|r| r.reply.clone())
                    .ok_or_else(|| GatewayError::ScriptMiss {
                        digest,
                        prompt_head: bundle.prompt.chars().take(80).collect(),
                    })
            }
        }
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Wraps another backend and records every reply keyed by prompt digest,
/// so a live run can be replayed offline.
pub struct RecordingBackend {
    inner: Arc<dyn TextBackend>,
    recorded: Mutex<BTreeMap<String, String>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn TextBackend>) -> Self {
        Self {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    /// Keyed script of everything seen so far, ordered by digest.
    pub fn script(&self) -> ScriptFile {
        let recorded = self.recorded.lock().expect("recording poisoned");
        ScriptFile {
            mode: ScriptMode::Keyed,
            entries: recorded
                .iter()
                .map(|(d, r)| ScriptEntry {
                    digest: Some(d.clone()),
                    contains: Vec::new(),
                    reply: r.clone(),
                })
                .collect(),
        }
    }
}

impl TextBackend for RecordingBackend {
    fn complete(&self, bundle: &PromptBundle, params: &GenerationParams) -> Result<String, GatewayError> {
        let reply = self.inner.complete(bundle, params)?;
        self.recorded
            .lock()
            .expect("recording poisoned")
            .insert(bundle.digest(), reply.clone());
        Ok(reply)
    }

    fn name(&self) -> &str {
        "recording"
    }
}
