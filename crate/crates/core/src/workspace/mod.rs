//! Operator workspace: config, cohort registry, and the commands behind
//! the `dxagent` binary.
//!
//! Layout under the workspace root:
//!
//! ```text
//! dxagent.toml
//! cohorts/registry.json
//! repos/<name>/          DCP repositories and their accrual episodes
//! runs/<name>/           evaluation and analysis outputs
//! rulepacks/*.toml       overrides the builtin packs when non-empty
//! ```

mod commands;
mod config;
mod registry;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

pub use commands::{
    cmd_accrue, cmd_analyze, cmd_dcp_list, cmd_dcp_retract, cmd_dcp_show, cmd_evaluate, cmd_index_guidelines,
    cmd_validate, load_run_results, render_dcp_details, write_episode_artifacts, AccrualSummary, AccrueOptions,
    AnalyzeOptions, EvaluateOptions, EvaluationSummary, ValidationReport, ACCRUAL_LOG,
};
pub use config::{
    AnalysisConfig, BackendConfig, BackendKind, ConsolidationConfig, EmbedderConfig, EmbedderKind, GuidelinesConfig,
    PubMedConfig, PubMedKind, VocabConfig, WorkspaceConfig, CONFIG_FILE,
};
pub use registry::{CohortEntry, CohortRegistry, CohortRole, REGISTRY_FILE};

use crate::dcp::DcpError;
use crate::encounter::{CanonMap, CohortError, ImagingAliases, LabelFirewall, VocabError, Vocabulary};
use crate::eval::EvalError;
use crate::feedback::{FeedbackError, RulePackSet};
use crate::gateway::{
    Embedder, EmbeddingError, Gateway, GatewayError, HttpBackend, HttpEmbedder, ScriptMode, ScriptedBackend,
    ScriptedEmbedder, TextBackend,
};
use crate::knowledge::{
    CannedEutils, GuidelineError, GuidelineIndex, GuidelineSearcher, HttpEutils, PubMedClient, PubMedError,
};
use crate::protocol::{ModelProfile, ModelProfiles, ProfileError};
use crate::runner::RunnerError;

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("refused: {0}")]
    Governance(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Dcp(#[from] DcpError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Guideline(#[from] GuidelineError),
    #[error(transparent)]
    PubMed(#[from] PubMedError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

fn is_backend_error(e: &GatewayError) -> bool {
    !matches!(e, GatewayError::Config(_) | GatewayError::HostNotAllowed(_))
}

impl WorkspaceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        WorkspaceError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit status: 2 validation, 3 governance refusal, 4 backend
    /// failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkspaceError::Validation(_) | WorkspaceError::Cohort(_) => 2,
            WorkspaceError::Governance(_) => 3,
            WorkspaceError::Backend(_) => 4,
            WorkspaceError::Gateway(e) | WorkspaceError::Dcp(DcpError::Gateway(e)) if is_backend_error(e) => 4,
            WorkspaceError::Embedding(EmbeddingError::Backend(_))
            | WorkspaceError::Dcp(DcpError::Embedding(EmbeddingError::Backend(_))) => 4,
            _ => 1,
        }
    }
}

/// A workspace root with its loaded config.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    config: WorkspaceConfig,
}

/// Sanitizes an encounter or run name for use as a directory name.
pub(crate) fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl Workspace {
    pub fn open(root: &Path) -> Result<Self, WorkspaceError> {
        let config = WorkspaceConfig::load(root)?;
        Ok(Self::with_config(root, config))
    }

    pub fn with_config(root: &Path, config: WorkspaceConfig) -> Self {
        Self {
            root: root.to_path_buf(),
            config,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &WorkspaceConfig {
        &self.config
    }

    /// Relative paths are taken from the workspace root.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn repo_dir(&self, name: &str) -> PathBuf {
        self.root.join("repos").join(file_safe(name))
    }

    pub fn run_dir(&self, name: &str) -> PathBuf {
        self.root.join("runs").join(file_safe(name))
    }

    pub fn vocabulary(&self) -> Result<Vocabulary, WorkspaceError> {
        let v = &self.config.vocab;
        let canon = match &v.canon_map {
            Some(p) => CanonMap::load(&self.resolve(p))?,
            None => CanonMap::builtin(),
        };
        let imaging = match &v.imaging_aliases {
            Some(p) => ImagingAliases::load(&self.resolve(p))?,
            None => ImagingAliases::builtin(),
        };
        Ok(Vocabulary { canon, imaging })
    }

    /// Packs from `rulepacks/` when it holds any, else the builtin set.
    pub fn rule_packs(&self) -> Result<RulePackSet, WorkspaceError> {
        let dir = self.root.join("rulepacks");
        let has_packs = std::fs::read_dir(&dir)
            .map(|entries| {
                entries
                    .filter_map(Result::ok)
                    .any(|e| e.path().extension().is_some_and(|x| x == "toml"))
            })
            .unwrap_or(false);
        Ok(if has_packs {
            RulePackSet::load_dir(&dir)?
        } else {
            RulePackSet::builtin()
        })
    }

    /// Label terms come from each pack's diagnosis synonyms.
    pub fn firewall(&self, packs: &RulePackSet) -> LabelFirewall {
        let mut fw = LabelFirewall::new();
        for p in packs.iter() {
            fw.add_synonyms(&p.pathology, &p.synonyms);
        }
        fw
    }

    pub fn profile(&self) -> Result<ModelProfile, WorkspaceError> {
        let profiles = match &self.config.backend.profiles_file {
            Some(p) => ModelProfiles::load(&self.resolve(p))?,
            None => ModelProfiles::builtin(),
        };
        Ok(profiles.get(&self.config.backend.profile)?.clone())
    }

    /// The configured text backend, plus the script mode when scripted.
    /// `script` overrides the configured reply script.
    pub fn text_backend(
        &self,
        script: Option<&Path>,
    ) -> Result<(Arc<dyn TextBackend>, Option<ScriptMode>), WorkspaceError> {
        let b = &self.config.backend;
        match (b.kind, script) {
            (BackendKind::Http, None) => Ok((Arc::new(HttpBackend::new(&b.http)?), None)),
            (_, Some(path)) => {
                let s = ScriptedBackend::from_file(path)?;
                let mode = s.mode();
                Ok((Arc::new(s), Some(mode)))
            }
            (BackendKind::Scripted, None) => {
                let path = b
                    .script
                    .as_ref()
                    .ok_or_else(|| WorkspaceError::Config("backend.script is not set".into()))?;
                let s = ScriptedBackend::from_file(&self.resolve(path))?;
                let mode = s.mode();
                Ok((Arc::new(s), Some(mode)))
            }
        }
    }

    pub fn gateway(&self, backend: Arc<dyn TextBackend>, scripted: bool) -> Gateway {
        let backoff = if scripted {
            Duration::ZERO
        } else {
            Duration::from_millis(self.config.backend.backoff_ms)
        };
        Gateway::new(backend)
            .with_attempts(self.config.backend.attempts)
            .with_backoff(backoff)
    }

    pub fn embedder(&self) -> Result<Embedder, WorkspaceError> {
        let e = &self.config.embedder;
        Ok(match e.kind {
            EmbedderKind::Hashing => Embedder::hashing(e.dimension),
            EmbedderKind::Scripted => {
                let path = e.vectors.as_ref().expect("validated");
                Embedder::new(Arc::new(ScriptedEmbedder::from_file(&self.resolve(path))?))
            }
            EmbedderKind::Http => Embedder::new(Arc::new(HttpEmbedder::new(&e.http, e.dimension)?)),
        })
    }

    /// Guideline searcher over the saved index; without an index file it
    /// answers every query with the unavailable observation.
    pub fn guideline_searcher(&self, embedder: &Embedder) -> Result<GuidelineSearcher, WorkspaceError> {
        let g = &self.config.guidelines;
        let path = self.resolve(&g.index);
        let index = if path.exists() {
            Some(GuidelineIndex::load(&path)?)
        } else {
            tracing::warn!(path = %path.display(), "no guideline index; Guideline Search will report unavailable");
            None
        };
        Ok(GuidelineSearcher::new(index, embedder.clone(), g.search)?)
    }

    pub fn pubmed(&self) -> Result<Option<PubMedClient>, WorkspaceError> {
        let p = &self.config.pubmed;
        Ok(match p.kind {
            PubMedKind::Disabled => None,
            PubMedKind::Http => Some(PubMedClient::new(
                Arc::new(HttpEutils::new(&p.base_url, Duration::from_secs(p.timeout_secs))?),
                p.max_results,
            )),
            PubMedKind::Canned => {
                let path = p.transcript.as_ref().expect("validated");
                Some(PubMedClient::new(
                    Arc::new(CannedEutils::from_file(&self.resolve(path))?),
                    p.max_results,
                ))
            }
        })
    }
}
