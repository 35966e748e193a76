//! Per-run event log: prompts, completions, selections, tool runs, observations.

use std::io::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::model::{Action, Observation};
use crate::tools::ToolKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Request {
        role: String,
        prompt: String,
        temperature: f64,
        n: usize,
    },
    Completions {
        role: String,
        texts: Vec<String>,
    },
    BackendFailure {
        role: String,
        message: String,
    },
    Shortcut {
        answers: Vec<Option<String>>,
        fired: bool,
    },
    Selected {
        iteration: usize,
        candidates: usize,
        index: usize,
        action: Action,
    },
    Tool {
        iteration: usize,
        tool: ToolKind,
        detail: String,
    },
    Observed {
        iteration: usize,
        observation: Observation,
    },
}

/// Append-only event list shared by the agents of one run.
#[derive(Debug, Default)]
pub struct TraceLog(Mutex<Vec<TraceEvent>>);

impl TraceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, event: TraceEvent) {
        self.0.lock().unwrap().push(event);
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.0.lock().unwrap().clone()
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for event in self.0.lock().unwrap().iter() {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}
