//! Encyclopedia lookup: first paragraph of the top search hit for an entity.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::debug;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("search entity is empty")]
    EmptyEntity,
    #[error("no entry found for {0:?}")]
    NotFound(String),
    #[error("network error: {0}")]
    NetworkError(String),
}

/// Source of short factual passages about an entity.
pub trait KnowledgeSearch: Send + Sync {
    fn search(&self, entity: &str) -> Result<String, SearchError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WikiConfig {
    pub endpoint: String,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_s: f64,
    /// Minimum spacing between requests to the endpoint.
    pub min_interval_ms: u64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for WikiConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://en.wikipedia.org/w/api.php".into(),
            max_retries: 2,
            backoff_ms: 500,
            timeout_s: 15.0,
            min_interval_ms: 100,
            cache_dir: None,
        }
    }
}

/// MediaWiki API client using search generator plus intro extracts.
pub struct WikiClient {
    config: WikiConfig,
    agent: ureq::Agent,
    last_request: Mutex<Option<Instant>>,
}

#[derive(Serialize, Deserialize)]
struct CachedParagraph {
    entity: String,
    paragraph: String,
}

impl WikiClient {
    pub fn new(config: WikiConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_s.max(0.001)))
            .user_agent("mact-tqa/0.1")
            .build();
        Self {
            config,
            agent,
            last_request: Mutex::new(None),
        }
    }

    fn cache_path(&self, entity: &str) -> Option<PathBuf> {
        let dir = self.config.cache_dir.as_ref()?;
        let key = hex::encode(Sha256::digest(entity.as_bytes()));
        Some(dir.join(format!("wiki-{key}.json")))
    }

    fn fetch_once(&self, entity: &str) -> Result<Value, SearchError> {
        // Held across the request, which serializes calls to the host.
        let mut last = self.last_request.lock().unwrap();
        if let Some(prev) = *last {
            let gap = Duration::from_millis(self.config.min_interval_ms);
            let elapsed = prev.elapsed();
            if elapsed < gap {
                std::thread::sleep(gap - elapsed);
            }
        }
        *last = Some(Instant::now());
        let resp = self
            .agent
            .get(&self.config.endpoint)
            .query("action", "query")
            .query("format", "json")
            .query("generator", "search")
            .query("gsrsearch", entity)
            .query("gsrlimit", "1")
            .query("prop", "extracts")
            .query("exintro", "1")
            .query("explaintext", "1")
            .query("redirects", "1")
            .call()
            .map_err(|e| SearchError::NetworkError(e.to_string()))?;
        resp.into_json::<Value>()
            .map_err(|e| SearchError::NetworkError(format!("unreadable reply: {e}")))
    }

    fn fetch(&self, entity: &str) -> Result<Value, SearchError> {
        let mut attempt = 0;
        loop {
            match self.fetch_once(entity) {
                Err(SearchError::NetworkError(e)) if attempt < self.config.max_retries => {
                    debug!("search attempt {} failed: {e}", attempt + 1);
                    std::thread::sleep(Duration::from_millis(
                        self.config.backoff_ms.saturating_mul(1 << attempt.min(10)),
                    ));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// First non-blank paragraph of the first page in a query reply.
pub fn first_paragraph(reply: &Value) -> Option<String> {
    let pages = reply["query"]["pages"].as_object()?;
    let mut pages: Vec<&Value> = pages.values().collect();
    // Search generator results carry their rank in `index`.
    pages.sort_by_key(|p| p["index"].as_i64().unwrap_or(i64::MAX));
    pages.iter().find_map(|page| {
        page["extract"]
            .as_str()?
            .split('\n')
            .map(str::trim)
            .find(|line| !line.is_empty())
            .map(str::to_string)
    })
}

impl KnowledgeSearch for WikiClient {
    fn search(&self, entity: &str) -> Result<String, SearchError> {
        let entity = entity.trim();
        if entity.is_empty() {
            return Err(SearchError::EmptyEntity);
        }
        if let Some(path) = self.cache_path(entity) {
            if let Ok(bytes) = std::fs::read(&path) {
                if let Ok(hit) = serde_json::from_slice::<CachedParagraph>(&bytes) {
                    if hit.entity == entity {
                        return Ok(hit.paragraph);
                    }
                }
            }
        }
        let reply = self.fetch(entity)?;
        let paragraph = first_paragraph(&reply).ok_or_else(|| SearchError::NotFound(entity.to_string()))?;
        if let Some(path) = self.cache_path(entity) {
            let record = CachedParagraph {
                entity: entity.to_string(),
                paragraph: paragraph.clone(),
            };
            if let Some(dir) = path.parent() {
                let _ = std::fs::create_dir_all(dir);
            }
            if let Err(e) = std::fs::write(&path, serde_json::to_vec(&record).unwrap_or_default()) {
                log::warn!("cannot cache search result for {entity:?}: {e}");
            }
        }
        Ok(paragraph)
    }
}

/// Fixed entity → paragraph map, for offline runs and tests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StaticSearch {
    pub entries: std::collections::BTreeMap<String, String>,
}

impl StaticSearch {
    /// Reads a JSON object mapping entity names to paragraphs.
    pub fn from_json_file(path: &std::path::Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

impl KnowledgeSearch for StaticSearch {
    fn search(&self, entity: &str) -> Result<String, SearchError> {
        let entity = entity.trim();
        if entity.is_empty() {
            return Err(SearchError::EmptyEntity);
        }
        self.entries
            .get(entity)
            .or_else(|| {
                self.entries
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case(entity))
                    .map(|(_, v)| v)
            })
            .cloned()
            .ok_or_else(|| SearchError::NotFound(entity.to_string()))
    }
}
