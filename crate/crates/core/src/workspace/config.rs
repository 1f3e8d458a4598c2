use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::WorkspaceError;
use crate::eval::Footprint;
use crate::gateway::{GenerationParams, HttpConfig, DEFAULT_ATTEMPTS};
use crate::knowledge::{ChunkingConfig, GuidelineSearchConfig};
use crate::runner::EpisodeConfig;

pub const CONFIG_FILE: &str = "dxagent.toml";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Reply script for the scripted backend, relative to the workspace.
    pub script: Option<PathBuf>,
    pub profile: String,
    /// Extra model profiles (JSON); the builtin set is used otherwise.
    pub profiles_file: Option<PathBuf>,
    pub attempts: u32,
    pub backoff_ms: u64,
    pub http: HttpConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            script: None,
            profile: "plain".to_string(),
            profiles_file: None,
            attempts: DEFAULT_ATTEMPTS,
            backoff_ms: 500,
            http: HttpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hashing,
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    /// Text-to-vector table for the scripted embedder.
    pub vectors: Option<PathBuf>,
    pub http: HttpConfig,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hashing,
            dimension: 256,
            vectors: None,
            http: HttpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsolidationConfig {
    pub generation: GenerationParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub canon_map: Option<PathBuf>,
    pub imaging_aliases: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidelinesConfig {
    pub corpus: PathBuf,
    pub index: PathBuf,
    pub chunking: ChunkingConfig,
    pub search: GuidelineSearchConfig,
}

impl Default for GuidelinesConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("guidelines/corpus"),
            index: PathBuf::from("guidelines/index.json"),
            chunking: ChunkingConfig::default(),
            search: GuidelineSearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PubMedKind {
    /// The tool answers with the unavailable-tool observation.
    #[default]
    Disabled,
    Http,
    /// Replays a recorded E-utilities transcript.
    Canned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PubMedConfig {
    pub kind: PubMedKind,
    pub base_url: String,
    pub transcript: Option<PathBuf>,
    pub max_results: usize,
    pub timeout_secs: u64,
}

impl Default for PubMedConfig {
    fn default() -> Self {
        Self {
            kind: PubMedKind::Disabled,
            base_url: crate::knowledge::DEFAULT_EUTILS_BASE.to_string(),
            transcript: None,
            max_results: 3,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub footprint: Footprint,
}

/// Contents of `dxagent.toml`. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceConfig {
    pub backend: BackendConfig,
    pub embedder: EmbedderConfig,
    pub episode: EpisodeConfig,
    pub consolidation: ConsolidationConfig,
    pub vocab: VocabConfig,
    pub guidelines: GuidelinesConfig,
    pub pubmed: PubMedConfig,
    pub analysis: AnalysisConfig,
}

impl WorkspaceConfig {
    pub fn parse(text: &str) -> Result<Self, WorkspaceError> {
        let cfg: Self = toml::from_str(text).map_err(|e| WorkspaceError::Config(format!("{CONFIG_FILE}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `dir/dxagent.toml`, falling back to defaults when it is absent.
    pub fn load(dir: &Path) -> Result<Self, WorkspaceError> {
        let path = dir.join(CONFIG_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(WorkspaceError::io(&path, e)),
        }
    }

    pub fn validate(&self) -> Result<(), WorkspaceError> {
        let bad = |m: String| Err(WorkspaceError::Config(m));
        self.episode
            .validate()
            .map_err(|e| WorkspaceError::Config(e.to_string()))?;
        self.consolidation
            .generation
            .validate()
            .map_err(|e| WorkspaceError::Config(format!("consolidation: {e}")))?;
        if self.backend.attempts == 0 {
            return bad("backend.attempts must be at least 1".into());
        }
        if self.embedder.dimension == 0 {
            return bad("embedder.dimension must be positive".into());
        }
        if self.backend.kind == BackendKind::Http && self.backend.http.model.is_empty() {
            return bad("backend.http.model is required for the http backend".into());
        }
        if self.pubmed.kind == PubMedKind::Canned && self.pubmed.transcript.is_none() {
            return bad("pubmed.transcript is required for the canned PubMed client".into());
        }
        if self.embedder.kind == EmbedderKind::Scripted && self.embedder.vectors.is_none() {
            return bad("embedder.vectors is required for the scripted embedder".into());
        }
        Ok(())
    }
}
