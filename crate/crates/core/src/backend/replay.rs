use std::collections::{HashMap, VecDeque};
use std::io::BufRead;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{prompt_hash, Backend, BackendError, Completion, GenRequest};

/// A canned completion: either bare text or text with log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedCompletion {
    Text(String),
    Full(Completion),
}

impl From<ScriptedCompletion> for Completion {
    fn from(c: ScriptedCompletion) -> Self {
        match c {
            ScriptedCompletion::Text(text) => Completion::text(text),
            ScriptedCompletion::Full(c) => c,
        }
    }
}

/// One line of a replay script.
///
/// Entries with a `prompt_hash` answer that exact prompt, always with the same
/// completions. Entries without one form a queue consumed in order; an
/// `instance_id` restricts the queue to requests made for that instance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub completions: Vec<ScriptedCompletion>,
}

impl ReplayEntry {
    pub fn queued<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self {
            completions: texts.into_iter().map(|t| ScriptedCompletion::Text(t.into())).collect(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Default)]
struct ReplayState {
    keyed: HashMap<String, Vec<Completion>>,
    scoped: HashMap<String, VecDeque<Completion>>,
    queue: VecDeque<Completion>,
}

/// Deterministic backend that serves completions from a script.
#[derive(Debug)]
pub struct ReplayBackend {
    name: String,
    state: Mutex<ReplayState>,
}

impl ReplayBackend {
    pub fn new(name: impl Into<String>, entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let mut state = ReplayState::default();
        for entry in entries {
            let completions = entry.completions.into_iter().map(Completion::from);
            match (entry.prompt_hash, entry.instance_id) {
                (Some(hash), _) => state.keyed.entry(hash).or_default().extend(completions),
                (None, Some(id)) => state.scoped.entry(id).or_default().extend(completions),
                (None, None) => state.queue.extend(completions),
            }
        }
        Self {
            name: name.into(),
            state: Mutex::new(state),
        }
    }

    /// A backend answering every request from one ordered list of texts.
    pub fn sequential<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new("sequential", [ReplayEntry::queued(texts)])
    }

    pub fn from_jsonl(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut entries = Vec::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), n + 1),
                )
            })?;
            entries.push(entry);
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self::new(name, entries))
    }

    /// Completions not yet consumed from the unkeyed queues.
    pub fn remaining(&self) -> usize {
        let state = self.state.lock().unwrap();
        state.queue.len() + state.scoped.values().map(VecDeque::len).sum::<usize>()
    }
}

fn take(queue: &mut VecDeque<Completion>, n: usize) -> Result<Vec<Completion>, BackendError> {
    if queue.len() < n {
        return Err(BackendError::ScriptExhausted {
            wanted: n,
            available: queue.len(),
        });
    }
    Ok(queue.drain(..n).collect())
}

impl Backend for ReplayBackend {
    fn id(&self) -> String {
        format!("replay:{}", self.name)
    }

    fn generate(&self, request: &GenRequest) -> Result<Vec<Completion>, BackendError> {
        let mut state = self.state.lock().unwrap();
        if let Some(keyed) = state.keyed.get(&prompt_hash(&request.prompt)) {
            if keyed.len() < request.n {
                return Err(BackendError::ScriptExhausted {
                    wanted: request.n,
                    available: keyed.len(),
                });
            }
            return Ok(keyed[..request.n].to_vec());
        }
        if let Some(queue) = request.scope.as_ref().and_then(|s| state.scoped.get_mut(s)) {
            return take(queue, request.n);
        }
        take(&mut state.queue, request.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{sample, CallCounter};

    fn texts(c: &[Completion]) -> Vec<&str> {
        c.iter().map(|c| c.text.as_str()).collect()
    }

    #[test]
    fn serves_script_in_order() {
        let backend = ReplayBackend::sequential(["A", "B", "A"]);
        let counter = CallCounter::new();
        let out = sample(&backend, &GenRequest::new("p", 0.6, 3), &counter).unwrap();
        assert_eq!(texts(&out), ["A", "B", "A"]);
        assert_eq!(counter.get(), 3);
    }

    #[test]
    fn exhausted_script() {
        let backend = ReplayBackend::sequential(["A", "B"]);
        let counter = CallCounter::new();
        let err = sample(&backend, &GenRequest::new("p", 0.6, 3), &counter).unwrap_err();
        assert_eq!(
            err,
            BackendError::ScriptExhausted {
                wanted: 3,
                available: 2
            }
        );
        assert_eq!(counter.get(), 0);
        assert_eq!(backend.remaining(), 2);
    }

    #[test]
    fn keyed_entries_are_pure() {
        let backend = ReplayBackend::new(
            "k",
            [ReplayEntry {
                prompt_hash: Some(prompt_hash("hello")),
                completions: vec![
                    ScriptedCompletion::Text("x".into()),
                    ScriptedCompletion::Text("y".into()),
                ],
                ..Default::default()
            }],
        );
        let req = GenRequest::new("hello", 0.0, 2);
        assert_eq!(texts(&backend.generate(&req).unwrap()), ["x", "y"]);
        assert_eq!(texts(&backend.generate(&req).unwrap()), ["x", "y"]);
        assert!(backend.generate(&GenRequest::new("other", 0.0, 1)).is_err());
    }

    #[test]
    fn scoped_queues_are_independent() {
        let backend = ReplayBackend::new(
            "s",
            [
                ReplayEntry {
                    instance_id: Some("a".into()),
                    ..ReplayEntry::queued(["a1", "a2"])
                },
                ReplayEntry {
                    instance_id: Some("b".into()),
                    ..ReplayEntry::queued(["b1"])
                },
            ],
        );
        let req = |s: &str| GenRequest::new("p", 0.6, 1).with_scope(Some(s.into()));
        assert_eq!(texts(&backend.generate(&req("b")).unwrap()), ["b1"]);
        assert_eq!(texts(&backend.generate(&req("a")).unwrap()), ["a1"]);
        assert_eq!(texts(&backend.generate(&req("a")).unwrap()), ["a2"]);
    }

    #[test]
    fn reads_jsonl_with_logprobs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        std::fs::write(
            &path,
            "{\"completions\":[\"plain\",{\"text\":\"lp\",\"token_logprobs\":[[\"lp\",-0.5]]}]}\n\n",
        )
        .unwrap();
        let backend = ReplayBackend::from_jsonl(&path).unwrap();
        let out = backend.generate(&GenRequest::new("p", 0.6, 2)).unwrap();
        assert_eq!(out[0], Completion::text("plain"));
        assert_eq!(out[1].token_logprobs, Some(vec![("lp".to_string(), -0.5)]));
        assert_eq!(backend.id(), "replay:script");
    }
}
