//! Actions, observations and the append-only memory state of one run.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::TqaInstance;
use crate::tools::ToolKind;

/// Observation text used when no tool and no estimate produced a value.
pub const NO_OBSERVATION: &str = "[no observation: every estimate was absent and every execution failed]";

/// What an action is for. Exactly six kinds exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intent {
    Retrieval,
    Calculation,
    Search,
    Read,
    Finish,
    Ask,
}

impl Intent {
    pub const ALL: [Intent; 6] = [
        Intent::Retrieval,
        Intent::Calculation,
        Intent::Search,
        Intent::Read,
        Intent::Finish,
        Intent::Ask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Intent::Retrieval => "Retrieval",
            Intent::Calculation => "Calculation",
            Intent::Search => "Search",
            Intent::Read => "Read",
            Intent::Finish => "Finish",
            Intent::Ask => "Ask",
        }
    }

    /// Case-insensitive lookup of a canonical name or one of its aliases.
    pub fn from_token(token: &str) -> Option<Intent> {
        let lower = token.trim().to_ascii_lowercase();
        let intent = match lower.as_str() {
            "retrieval" | "retrieve" => Intent::Retrieval,
            "calculation" | "calculate" => Intent::Calculation,
            "search" => Intent::Search,
            "read" => Intent::Read,
            "finish" => Intent::Finish,
            "ask" => Intent::Ask,
            _ => return None,
        };
        Some(intent)
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown intent {0:?}")]
pub struct UnknownIntent(pub String);

impl FromStr for Intent {
    type Err = UnknownIntent;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Intent::from_token(s).ok_or_else(|| UnknownIntent(s.to_string()))
    }
}

/// An intent plus its bracketed instruction, e.g. `Retrieval[sale numbers of 2019]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub intent: Intent,
    pub instruction: String,
}

impl Action {
    pub fn new(intent: Intent, instruction: impl Into<String>) -> Self {
        Self {
            intent,
            instruction: instruction.into(),
        }
    }

    /// Key used when counting votes: whitespace-collapsed instruction, canonical intent.
    pub fn vote_key(&self) -> String {
        format!("{}[{}]", self.intent, collapse_whitespace(&self.instruction))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.intent, self.instruction)
    }
}

pub(crate) fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationSource {
    DeterministicTool,
    MajorityVote,
    PlannerQuery,
}

/// The final observation attached to a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub source: ObservationSource,
    /// Set when `text` is a failure sentinel rather than a value.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

impl Observation {
    pub fn new(text: impl Into<String>, source: ObservationSource) -> Self {
        Self {
            text: text.into(),
            source,
            failed: false,
        }
    }

    pub fn failure(text: impl Into<String>, source: ObservationSource) -> Self {
        Self {
            text: text.into(),
            source,
            failed: true,
        }
    }
}

/// One parsed planner sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStep {
    pub thought: String,
    pub action: Action,
    pub estimated_observation: Option<String>,
    pub sample_index: usize,
    /// Mean token log-probability over the action segment, when the backend reports it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_logprob: Option<f64>,
}

/// A selected action with its observation, as stored in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Loop iteration (1-based) that produced this step.
    pub iteration: usize,
    pub thought: String,
    pub selected_action: Action,
    pub observation: Observation,
    pub tool_kind: ToolKind,
    /// Calls issued while executing this iteration.
    pub llm_calls: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("memory already holds {0} steps, the iteration cap")]
    IterationCapReached(usize),
}

/// The growing context of a run: the instance plus appended steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub instance: TqaInstance,
    pub steps: Vec<Step>,
}

impl MemoryState {
    pub fn initial(instance: TqaInstance) -> Self {
        Self {
            instance,
            steps: Vec::new(),
        }
    }

    /// Index the planner should use for its next thought/action/observation triple.
    pub fn next_index(&self) -> usize {
        self.steps.len() + 1
    }

    /// Appends a step, refusing to grow past `max_iterations` entries.
    pub fn append_step(&mut self, step: Step, max_iterations: usize) -> Result<(), MemoryError> {
        if self.steps.len() >= max_iterations {
            return Err(MemoryError::IterationCapReached(max_iterations));
        }
        self.steps.push(step);
        Ok(())
    }

    /// Value-returning form of [`MemoryState::append_step`].
    pub fn with_step(&self, step: Step, max_iterations: usize) -> Result<Self, MemoryError> {
        let mut next = self.clone();
        next.append_step(step, max_iterations)?;
        Ok(next)
    }
}
