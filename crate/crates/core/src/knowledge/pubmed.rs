use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PUBMED_UNAVAILABLE: &str = "PubMed search unavailable.";
pub const NO_ARTICLES: &str = "No relevant articles found.";
pub const DEFAULT_EUTILS_BASE: &str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils";
pub const API_KEY_ENV: &str = "NCBI_API_KEY";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PubMedError {
    #[error("E-utilities transport: {0}")]
    Transport(String),
    #[error("malformed {endpoint} response: {message}")]
    Malformed { endpoint: String, message: String },
    #[error("canned transcript: {0}")]
    Transcript(String),
}

/// One GET against an E-utilities endpoint (`esearch.fcgi`, ...). Tests swap
/// in [`CannedEutils`].
pub trait EutilsTransport: Send + Sync {
    fn get(&self, endpoint: &str, params: &[(&str, String)]) -> Result<String, PubMedError>;
}

/// Live client, rate limited to three requests per second.
pub struct HttpEutils {
    client: reqwest::blocking::Client,
    base: String,
    api_key: Option<String>,
    last: Mutex<Option<Instant>>,
    min_interval: Duration,
}

impl HttpEutils {
    pub fn new(base: &str, timeout: Duration) -> Result<Self, PubMedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| PubMedError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            base: base.trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            last: Mutex::new(None),
            min_interval: Duration::from_millis(334),
        })
    }

    fn wait_turn(&self) {
        let mut last = self.last.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

impl EutilsTransport for HttpEutils {
    fn get(&self, endpoint: &str, params: &[(&str, String)]) -> Result<String, PubMedError> {
        self.wait_turn();
        let mut query: Vec<(&str, String)> = params.to_vec();
        if let Some(key) = &self.api_key {
            query.push(("api_key", key.clone()));
        }
        let resp = self
            .client
            .get(format!("{}/{endpoint}", self.base))
            .query(&query)
            .send()
            .map_err(|e| PubMedError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(PubMedError::Transport(format!("HTTP {}", resp.status())));
        }
        resp.text().map_err(|e| PubMedError::Transport(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CannedExchange {
    pub endpoint: String,
    /// Parameters that must match exactly; unlisted parameters are ignored.
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    pub body: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CannedEutils {
    pub exchanges: Vec<CannedExchange>,
    /// Endpoints that fail with a transport error.
    #[serde(default)]
    pub fail: Vec<String>,
}

impl CannedEutils {
    pub fn from_file(path: &Path) -> Result<Self, PubMedError> {
        let text = std::fs::read_to_string(path).map_err(|e| PubMedError::Transcript(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| PubMedError::Transcript(e.to_string()))
    }
}

impl EutilsTransport for CannedEutils {
    fn get(&self, endpoint: &str, params: &[(&str, String)]) -> Result<String, PubMedError> {
        if self.fail.iter().any(|f| f == endpoint) {
            return Err(PubMedError::Transport(format!("{endpoint}: connection refused")));
        }
        self.exchanges
            .iter()
            .find(|x| {
                x.endpoint == endpoint
                    && x.params
                        .iter()
                        .all(|(k, v)| params.iter().any(|(pk, pv)| pk == k && pv == v))
            })
            .map(|x| x.body.clone())
            .ok_or_else(|| PubMedError::Transport(format!("no canned response for {endpoint} {params:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub pmid: String,
    pub title: String,
    pub abstract_text: String,
}

/// Splits on `.`, `!` or `?` followed by whitespace and keeps the first `n`
/// sentences.
pub fn first_sentences(text: &str, n: usize) -> String {
    let mut out = String::new();
    let mut count = 0;
    let mut chars = text.char_indices().peekable();
    let mut start = 0;
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = chars.peek().is_none_or(|(_, next)| next.is_whitespace());
            if at_boundary {
                let end = i + c.len_utf8();
                let sentence = text[start..end].trim();
                if !sentence.is_empty() {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(sentence);
                    count += 1;
                    if count == n {
                        return out;
                    }
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tail);
    }
    out
}

/// PubMed Search tool over an E-utilities transport.
#[derive(Clone)]
pub struct PubMedClient {
    transport: Arc<dyn EutilsTransport>,
    max_results: usize,
}

impl PubMedClient {
    pub fn new(transport: Arc<dyn EutilsTransport>, max_results: usize) -> Self {
        Self {
            transport,
            max_results: max_results.max(1),
        }
    }

    fn malformed(endpoint: &str, message: impl Into<String>) -> PubMedError {
        PubMedError::Malformed {
            endpoint: endpoint.to_string(),
            message: message.into(),
        }
    }

    pub fn search(&self, query: &str) -> Result<Vec<Article>, PubMedError> {
        let body = self.transport.get(
            "esearch.fcgi",
            &[
                ("db", "pubmed".into()),
                ("term", query.trim().to_string()),
                ("retmode", "json".into()),
                ("retmax", self.max_results.to_string()),
            ],
        )?;
        let json: Value = serde_json::from_str(&body).map_err(|e| Self::malformed("esearch", e.to_string()))?;
        let ids: Vec<String> = json
            .pointer("/esearchresult/idlist")
            .and_then(Value::as_array)
            .ok_or_else(|| Self::malformed("esearch", "missing esearchresult.idlist"))?
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .take(self.max_results)
            .collect();
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let id_param = ids.join(",");

        let body = self.transport.get(
            "esummary.fcgi",
            &[
                ("db", "pubmed".into()),
                ("id", id_param.clone()),
                ("retmode", "json".into()),
            ],
        )?;
        let json: Value = serde_json::from_str(&body).map_err(|e| Self::malformed("esummary", e.to_string()))?;
        let result = json
            .get("result")
            .ok_or_else(|| Self::malformed("esummary", "missing result"))?;
        let mut titles = BTreeMap::new();
        for id in &ids {
            if let Some(t) = result.pointer(&format!("/{id}/title")).and_then(Value::as_str) {
                titles.insert(id.clone(), t.trim().to_string());
            }
        }

        let xml = self.transport.get(
            "efetch.fcgi",
            &[
                ("db", "pubmed".into()),
                ("id", id_param),
                ("rettype", "abstract".into()),
                ("retmode", "xml".into()),
            ],
        )?;
        let abstracts = parse_efetch(&xml)?;

        Ok(ids
            .into_iter()
            .map(|pmid| {
                let (fetched_title, abstract_text) = abstracts.get(&pmid).cloned().unwrap_or_default();
                let title = titles.get(&pmid).cloned().unwrap_or(fetched_title);
                Article {
                    pmid,
                    title,
                    abstract_text,
                }
            })
            .collect())
    }

    /// Observation text plus, on failure, a detail line for the audit log.
    pub fn observe(&self, query: &str) -> (String, Option<String>) {
        match self.search(query) {
            Ok(articles) if articles.is_empty() => (NO_ARTICLES.to_string(), None),
            Ok(articles) => (render_articles(&articles), None),
            Err(e) => (PUBMED_UNAVAILABLE.to_string(), Some(e.to_string())),
        }
    }
}

/// PMID -> (title, abstract) from an efetch PubmedArticleSet.
fn parse_efetch(xml: &str) -> Result<BTreeMap<String, (String, String)>, PubMedError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| PubMedClient::malformed("efetch", e.to_string()))?;
    let mut out = BTreeMap::new();
    for article in doc.descendants().filter(|n| n.has_tag_name("PubmedArticle")) {
        let Some(pmid) = article
            .descendants()
            .find(|n| n.has_tag_name("PMID"))
            .and_then(|n| n.text())
        else {
            continue;
        };
        let title = article
            .descendants()
            .find(|n| n.has_tag_name("ArticleTitle"))
            .map(node_text)
            .unwrap_or_default();
        let abstract_text = article
            .descendants()
            .filter(|n| n.has_tag_name("AbstractText"))
            .map(node_text)
            .collect::<Vec<_>>()
            .join(" ");
        out.insert(pmid.trim().to_string(), (title, abstract_text));
    }
    Ok(out)
}

fn node_text(node: roxmltree::Node<'_, '_>) -> String {
    node.descendants()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render_articles(articles: &[Article]) -> String {
    articles
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let snippet = first_sentences(&a.abstract_text, 3);
            if snippet.is_empty() {
                format!("{}. {} (PMID {})", i + 1, a.title, a.pmid)
            } else {
                format!("{}. {} (PMID {})\n{}", i + 1, a.title, a.pmid, snippet)
            }
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}
