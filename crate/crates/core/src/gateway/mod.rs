//! Text generation and embedding backends.

mod audit;
mod embed;
mod http;
mod script;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use audit::{AuditLog, AuditRecord, Purpose};
pub use embed::{EmbedBackend, Embedder, EmbeddingError, EmbeddingVector, HashingEmbedder, ScriptedEmbedder};
pub use http::{checked_base_url, HttpBackend, HttpConfig, HttpEmbedder, LOCAL_HOSTS};
pub use script::{RecordingBackend, ScriptEntry, ScriptFile, ScriptMode, ScriptedBackend};

use crate::protocol::PromptBundle;

/// Decoding settings, fixed across every compared method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_new_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            top_p: 0.7,
            top_k: 50,
            max_new_tokens: 1024,
            stop_sequences: Vec::new(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::Config(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Config(format!("top_p {} must be in (0, 1]", self.top_p)));
        }
        if self.top_k == 0 {
            return Err(GatewayError::Config("top_k must be positive".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(GatewayError::Config("max_new_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport: {message}")]
    Transport { message: String, retriable: bool },
    #[error("backend failed after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("no scripted reply for prompt digest {digest} (prompt starts `{prompt_head}`)")]
    ScriptMiss { digest: String, prompt_head: String },
    #[error("sequence script exhausted after {served} replies")]
    ScriptExhausted { served: usize },
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("host `{0}` is not in the allow-list")]
    HostNotAllowed(String),
}

impl GatewayError {
    fn is_retriable(&self) -> bool {
        matches!(self, GatewayError::Transport { retriable: true, .. })
    }
}

pub trait TextBackend: Send + Sync {
    /// Raw completion for the bundle. Stop handling is left to [`Gateway`].
    fn complete(&self, bundle: &PromptBundle, params: &GenerationParams) -> Result<String, GatewayError>;

    fn name(&self) -> &str;
}

/// Cuts `text` before the earliest occurrence of any non-empty stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

/// Shared front end: retries, stop truncation and audit logging.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn TextBackend>,
    max_attempts: u32,
    backoff: Duration,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("max_attempts", &self.max_attempts)
            .finish()
    }
}

pub const DEFAULT_ATTEMPTS: u32 = 3;

impl Gateway {
    pub fn new(backend: Arc<dyn TextBackend>) -> Self {
        Self {
            backend,
            max_attempts: DEFAULT_ATTEMPTS,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn scripted(backend: ScriptedBackend) -> Self {
        Self::new(Arc::new(backend)).with_backoff(Duration::ZERO)
    }

    /// Total attempts per call, including the first.
    pub fn with_attempts(mut self, attempts: u32) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    /// Base delay between attempts; doubles after each failure.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn generate(
        &self,
        bundle: &PromptBundle,
        params: &GenerationParams,
        purpose: Purpose,
        audit: &mut AuditLog,
    ) -> Result<String, GatewayError> {
        let digest = bundle.digest();
        let mut stops = bundle.stop_sequences.clone();
        stops.extend(params.stop_sequences.iter().cloned());
        let mut attempts = 0;
        let mut delay = self.backoff;
        let outcome = loop {
            attempts += 1;
            match self.backend.complete(bundle, params) {
                Ok(raw) => break Ok(raw),
                Err(e) if e.is_retriable() && attempts < self.max_attempts => {
                    tracing::warn!(attempt = attempts, error = %e, "generation failed, retrying");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
                Err(e) if e.is_retriable() => {
                    break Err(GatewayError::Exhausted {
                        attempts,
                        last: e.to_string(),
                    })
                }
                Err(e) => break Err(e),
            }
        };
        match outcome {
            Ok(raw) => {
                let response = truncate_at_stop(&raw, &stops).to_string();
                audit.push(AuditRecord::Generation {
                    purpose,
                    digest,
                    params: params.clone(),
                    attempts,
                    response: response.clone(),
                    raw_response: raw,
                });
                Ok(response)
            }
            Err(e) => {
                audit.push(AuditRecord::GenerationFailed {
                    purpose,
                    digest,
                    attempts,
                    error: e.to_string(),
                });
                Err(e)
            }
        }
    }
}
