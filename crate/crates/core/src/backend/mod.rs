//! Text-generation backends and the call accounting shared by every agent.
//!
//! Every request that reaches a backend adds its sample count `n` to the
//! run's [`CallCounter`]; cache hits add nothing.

mod cache;
mod http;
mod record;
mod replay;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::events::{TraceEvent, TraceLog};

pub use cache::{cached_sample, CacheLookup, ResponseCache};
pub use http::{ChatBackend, ChatBackendConfig};
pub use record::RecordingBackend;
pub use replay::{ReplayBackend, ReplayEntry, ScriptedCompletion};

/// One generated text, optionally with per-token log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<(String, f64)>>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            token_logprobs: None,
        }
    }

    fn logprobs_valid(&self) -> bool {
        self.token_logprobs
            .as_ref()
            .is_none_or(|lp| lp.iter().all(|(_, p)| p.is_finite() && *p <= 0.0))
    }
}

/// A sampling request: `n` independent completions of `prompt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub temperature: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
    /// Instance id the request is made for. Replay scripts may scope entries by it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
}

impl GenRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64, n: usize) -> Self {
        Self {
            prompt: prompt.into(),
            temperature,
            n,
            stop: Vec::new(),
            scope: None,
        }
    }

    pub fn with_scope(mut self, scope: Option<String>) -> Self {
        self.scope = scope;
        self
    }

    pub fn with_stop(mut self, stop: Vec<String>) -> Self {
        self.stop = stop;
        self
    }
}

/// Hex SHA-256 of a prompt, as used for replay script keys.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("replay script exhausted: wanted {wanted} completions, {available} left")]
    ScriptExhausted { wanted: usize, available: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
}

/// Anything that can turn a prompt into `n` completions.
pub trait Backend: Send + Sync {
    /// Stable identifier, part of the cache key.
    fn id(&self) -> String;

    /// Largest `n` accepted in one request.
    fn max_n(&self) -> usize {
        64
    }

    /// Produces exactly `request.n` completions, in sampling order.
    fn generate(&self, request: &GenRequest) -> Result<Vec<Completion>, BackendError>;
}

/// Counts sampled completions. Shared by all agents of one run.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::SeqCst);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Sends a request to the backend, validates the reply and counts `n` calls.
pub fn sample(
    backend: &dyn Backend,
    request: &GenRequest,
    counter: &CallCounter,
) -> Result<Vec<Completion>, BackendError> {
    if request.n == 0 || request.n > backend.max_n() {
        return Err(BackendError::InvalidRequest(format!(
            "n = {} outside 1..={}",
            request.n,
            backend.max_n()
        )));
    }
    if !(request.temperature >= 0.0 && request.temperature.is_finite()) {
        return Err(BackendError::InvalidRequest(format!(
            "temperature {} is not a non-negative number",
            request.temperature
        )));
    }
    let completions = backend.generate(request)?;
    if completions.len() != request.n {
        return Err(BackendError::InvalidResponse(format!(
            "expected {} completions, got {}",
            request.n,
            completions.len()
        )));
    }
    if let Some(bad) = completions.iter().position(|c| !c.logprobs_valid()) {
        return Err(BackendError::InvalidResponse(format!(
            "completion {bad} carries non-finite or positive log-probabilities"
        )));
    }
    counter.add(request.n as u64);
    Ok(completions)
}

/// A backend handle bound to a run: optional response cache plus the run's counter.
#[derive(Clone)]
pub struct Sampler {
    pub backend: Arc<dyn Backend>,
    pub cache: Option<Arc<ResponseCache>>,
    pub counter: Arc<CallCounter>,
    /// Role name and event log receiving every request and reply.
    pub log: Option<(String, Arc<TraceLog>)>,
}

impl Sampler {
    pub fn new(backend: Arc<dyn Backend>, counter: Arc<CallCounter>) -> Self {
        Self {
            backend,
            cache: None,
            counter,
            log: None,
        }
    }

    pub fn with_cache(mut self, cache: Option<Arc<ResponseCache>>) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_log(mut self, role: impl Into<String>, log: Arc<TraceLog>) -> Self {
        self.log = Some((role.into(), log));
        self
    }

    pub fn sample(&self, request: &GenRequest) -> Result<Vec<Completion>, BackendError> {
        if let Some((role, log)) = &self.log {
            log.push(TraceEvent::Request {
                role: role.clone(),
                prompt: request.prompt.clone(),
                temperature: request.temperature,
                n: request.n,
            });
        }
        let result = match &self.cache {
            Some(cache) => cached_sample(cache, self.backend.as_ref(), request, &self.counter),
            None => sample(self.backend.as_ref(), request, &self.counter),
        };
        if let Some((role, log)) = &self.log {
            log.push(match &result {
                Ok(cs) => TraceEvent::Completions {
                    role: role.clone(),
                    texts: cs.iter().map(|c| c.text.clone()).collect(),
                },
                Err(e) => TraceEvent::BackendFailure {
                    role: role.clone(),
                    message: e.to_string(),
                },
            });
        }
        result
    }

    pub fn calls(&self) -> u64 {
        self.counter.get()
    }
}

impl std::fmt::Debug for Sampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sampler")
            .field("backend", &self.backend.id())
            .field("cached", &self.cache.is_some())
            .field("calls", &self.counter.get())
            .finish()
    }
}
