use std::time::Duration;

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{Backend, BackendError, Completion, GenRequest};

fn default_retries() -> u32 {
    3
}

fn default_timeout() -> f64 {
    60.0
}

fn default_backoff() -> u64 {
    500
}

/// Settings for a chat-completions style HTTP endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatBackendConfig {
    /// Base URL; `/chat/completions` is appended.
    pub url: String,
    pub model: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Send `n` in one request instead of `n` single-sample requests.
    #[serde(default)]
    pub native_n: bool,
    /// Ask the endpoint for token log-probabilities.
    #[serde(default)]
    pub logprobs: bool,
    /// Base delay of the exponential backoff.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    /// Extra request fields passed through verbatim (top_p, seed, ...).
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl ChatBackendConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            max_retries: default_retries(),
            timeout_s: default_timeout(),
            api_key_env: None,
            native_n: false,
            logprobs: false,
            backoff_ms: default_backoff(),
            params: Map::new(),
        }
    }
}

/// Blocking client for `POST {url}/chat/completions`.
pub struct ChatBackend {
    config: ChatBackendConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

enum Failure {
    Retryable {
        rate_limited: bool,
        detail: String,
        retry_after: Option<Duration>,
    },
    Fatal(String),
}

impl ChatBackend {
    pub fn new(config: ChatBackendConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_s.max(0.001)))
            .build();
        let token = config
            .api_key_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty());
        Self { config, agent, token }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.url.trim_end_matches('/'))
    }

    fn body(&self, request: &GenRequest, n: usize) -> Value {
        let mut body = Map::new();
        for (k, v) in &self.config.params {
            body.insert(k.clone(), v.clone());
        }
        body.insert("model".into(), json!(self.config.model));
        body.insert(
            "messages".into(),
            json!([{ "role": "user", "content": request.prompt }]),
        );
        body.insert("temperature".into(), json!(request.temperature));
        body.insert("n".into(), json!(n));
        if !request.stop.is_empty() {
            body.insert("stop".into(), json!(request.stop));
        }
        if self.config.logprobs {
            body.insert("logprobs".into(), json!(true));
        }
        Value::Object(body)
    }

    fn post_once(&self, body: &Value) -> Result<Value, Failure> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(body.clone()) {
            Ok(resp) => resp.into_json::<Value>().map_err(|e| Failure::Retryable {
                rate_limited: false,
                detail: format!("unreadable response body: {e}"),
                retry_after: None,
            }),
            Err(ureq::Error::Status(code, resp)) => {
                let retry_after = resp
                    .header("Retry-After")
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .map(|s| Duration::from_secs_f64(s.clamp(0.0, 30.0)));
                let text = resp.into_string().unwrap_or_default();
                let detail = format!("HTTP {code}: {}", text.chars().take(200).collect::<String>());
                if code == 429 || code >= 500 {
                    Err(Failure::Retryable {
                        rate_limited: code == 429,
                        detail,
                        retry_after,
                    })
                } else {
                    Err(Failure::Fatal(detail))
                }
            }
            Err(e) => Err(Failure::Retryable {
                rate_limited: false,
                detail: e.to_string(),
                retry_after: None,
            }),
        }
    }

    fn post_with_retries(&self, body: &Value) -> Result<Value, BackendError> {
        let attempts = self.config.max_retries + 1;
        let mut last_rate_limited = false;
        let mut last_detail = String::new();
        for attempt in 0..attempts {
            match self.post_once(body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(detail)) => return Err(BackendError::BackendUnavailable(detail)),
                Err(Failure::Retryable {
                    rate_limited,
                    detail,
                    retry_after,
                }) => {
                    debug!("attempt {} of {attempts} failed: {detail}", attempt + 1);
                    last_rate_limited = rate_limited;
                    last_detail = detail;
                    if attempt + 1 < attempts {
                        std::thread::sleep(retry_after.unwrap_or_else(|| self.backoff(attempt)));
                    }
                }
            }
        }
        warn!("giving up after {attempts} attempts: {last_detail}");
        if last_rate_limited {
            Err(BackendError::RateLimited { attempts })
        } else {
            Err(BackendError::BackendUnavailable(last_detail))
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_ms.saturating_mul(1 << attempt.min(10));
        let jitter = rand::thread_rng().gen_range(0..=self.config.backoff_ms / 2);
        Duration::from_millis(base.min(30_000) + jitter)
    }

    fn request(&self, request: &GenRequest, n: usize) -> Result<Vec<Completion>, BackendError> {
        let reply = self.post_with_retries(&self.body(request, n))?;
        let choices = reply["choices"]
            .as_array()
            .ok_or_else(|| BackendError::InvalidResponse("reply has no choices array".into()))?;
        let mut out = Vec::with_capacity(choices.len());
        for choice in choices {
            let text = choice["message"]["content"]
                .as_str()
                .or_else(|| choice["text"].as_str())
                .ok_or_else(|| BackendError::InvalidResponse("choice has no message content".into()))?;
            out.push(Completion {
                text: text.to_string(),
                token_logprobs: parse_logprobs(&choice["logprobs"]),
            });
        }
        Ok(out)
    }
}

fn parse_logprobs(v: &Value) -> Option<Vec<(String, f64)>> {
    let content = v["content"].as_array()?;
    content
        .iter()
        .map(|t| Some((t["token"].as_str()?.to_string(), t["logprob"].as_f64()?)))
        .collect()
}

impl Backend for ChatBackend {
    fn id(&self) -> String {
        format!("chat:{}@{}", self.config.model, self.config.url)
    }

    fn generate(&self, request: &GenRequest) -> Result<Vec<Completion>, BackendError> {
        if self.config.native_n {
            return self.request(request, request.n);
        }
        let mut out = Vec::with_capacity(request.n);
        for _ in 0..request.n {
            out.extend(self.request(request, 1)?);
        }
        Ok(out)
    }
}
