use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::{StatusCode, Url};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::embed::{EmbedBackend, EmbeddingError};
use super::{GatewayError, GenerationParams, TextBackend};
use crate::protocol::PromptBundle;

pub const LOCAL_HOSTS: [&str; 3] = ["localhost", "127.0.0.1", "::1"];

/// Connection settings for an OpenAI-compatible server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Hosts the client may talk to. Defaults to loopback only.
    pub allowed_hosts: Vec<String>,
    pub timeout_secs: u64,
    /// Name of an environment variable holding a bearer token.
    pub api_key_env: Option<String>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".to_string(),
            model: String::new(),
            allowed_hosts: LOCAL_HOSTS.iter().map(|s| s.to_string()).collect(),
            timeout_secs: 120,
            api_key_env: None,
        }
    }
}

/// Parses `base_url` and refuses any host outside the allow-list.
pub fn checked_base_url(base_url: &str, allowed_hosts: &[String]) -> Result<Url, GatewayError> {
    let url = Url::parse(base_url).map_err(|e| GatewayError::Config(format!("base url `{base_url}`: {e}")))?;
    let host = url
        .host_str()
        .ok_or_else(|| GatewayError::Config(format!("base url `{base_url}` has no host")))?
        .trim_start_matches('[')
        .trim_end_matches(']')
        .to_ascii_lowercase();
    if !allowed_hosts.iter().any(|h| h.eq_ignore_ascii_case(&host)) {
        return Err(GatewayError::HostNotAllowed(host));
    }
    Ok(url)
}

fn endpoint(base: &Url, path: &str) -> String {
    format!("{}/{}", base.as_str().trim_end_matches('/'), path)
}

struct Connection {
    client: Client,
    base: Url,
    model: String,
    api_key: Option<String>,
}

impl Connection {
    fn new(config: &HttpConfig) -> Result<Self, GatewayError> {
        let base = checked_base_url(&config.base_url, &config.allowed_hosts)?;
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let api_key = config.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
        Ok(Self {
            client,
            base,
            model: config.model.clone(),
            api_key,
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.client.post(endpoint(&self.base, path)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| GatewayError::Transport {
            message: e.to_string(),
            retriable: true,
        })?;
        let status = resp.status();
        if !status.is_success() {
            let retriable = status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS;
            let text = resp.text().unwrap_or_default();
            return Err(GatewayError::Transport {
                message: format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()),
                retriable,
            });
        }
        resp.json().map_err(|e| GatewayError::Transport {
            message: format!("decoding response: {e}"),
            retriable: false,
        })
    }
}

/// Chat-completions backend. The system text goes in a system message; the
/// user text plus the running scratchpad go in the user message.
pub struct HttpBackend {
    conn: Connection,
}

impl HttpBackend {
    pub fn new(config: &HttpConfig) -> Result<Self, GatewayError> {
        Ok(Self {
            conn: Connection::new(config)?,
        })
    }

    pub fn request_body(&self, bundle: &PromptBundle, params: &GenerationParams) -> Value {
        chat_body(&self.conn.model, bundle, params)
    }
}

pub(crate) fn chat_body(model: &str, bundle: &PromptBundle, params: &GenerationParams) -> Value {
    let messages = if bundle.user_text.is_empty() {
        vec![json!({"role": "user", "content": bundle.system_text})]
    } else {
        let mut user = bundle.user_text.clone();
        if !bundle.stop_sequences.is_empty() {
            user.push_str("\n\n");
            user.push_str(&bundle.scratchpad);
            user.push_str("Thought:");
        }
        vec![
            json!({"role": "system", "content": bundle.system_text}),
            json!({"role": "user", "content": user}),
        ]
    };
    let mut stop: Vec<&str> = bundle.stop_sequences.iter().map(String::as_str).collect();
    for s in &params.stop_sequences {
        if !stop.contains(&s.as_str()) {
            stop.push(s);
        }
    }
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": params.temperature,
        "top_p": params.top_p,
        "top_k": params.top_k,
        "max_tokens": params.max_new_tokens,
    });
    if !stop.is_empty() {
        body["stop"] = json!(stop);
    }
    body
}

impl TextBackend for HttpBackend {
    fn complete(&self, bundle: &PromptBundle, params: &GenerationParams) -> Result<String, GatewayError> {
        let resp = self.conn.post("chat/completions", &self.request_body(bundle, params))?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Transport {
                message: "response has no choices[0].message.content".into(),
                retriable: false,
            })
    }

    fn name(&self) -> &str {
        "http"
    }
}

/// `/embeddings` client.
pub struct HttpEmbedder {
    conn: Connection,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(config: &HttpConfig, dimension: usize) -> Result<Self, GatewayError> {
        if dimension == 0 {
            return Err(GatewayError::Config("embedding dimension must be positive".into()));
        }
        Ok(Self {
            conn: Connection::new(config)?,
            dimension,
        })
    }
}

impl EmbedBackend for HttpEmbedder {
    fn tag(&self) -> String {
        format!("http:{}:{}", self.conn.model, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let resp = self
            .conn
            .post("embeddings", &json!({"model": self.conn.model, "input": texts}))
            .map_err(|e| EmbeddingError::Backend(e.to_string()))?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbeddingError::Backend("response has no data array".into()))?;
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item
                .get("index")
                .and_then(Value::as_u64)
                .map(|i| i as usize)
                .unwrap_or(pos);
            let values = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| EmbeddingError::Backend(format!("data[{pos}] has no embedding")))?;
            let slot = out
                .get_mut(idx)
                .ok_or_else(|| EmbeddingError::Backend(format!("data[{pos}] index {idx} out of range")))?;
            *slot = values.iter().map(|v| v.as_f64().unwrap_or(f64::NAN) as f32).collect();
        }
        Ok(out)
    }
}
