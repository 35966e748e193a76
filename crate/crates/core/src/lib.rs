//! Multi-agent table question answering: a planning agent proposes actions,
//! a coding agent and deterministic tools execute them, and majority voting
//! turns sampled candidates into one trace.

pub mod backend;
pub mod coding;
pub mod config;
pub mod events;
pub mod fusion;
pub mod grammar;
pub mod harness;
pub mod model;
pub mod orchestrator;
pub mod planning;
pub mod prompt;
pub mod runner;
pub mod selection;
pub mod stats;
pub mod table;
pub mod tools;
pub mod vote;

pub use config::{Ablation, AblationSet, AppConfig, RunConfig};
pub use model::{Action, CandidateStep, Intent, MemoryState, Observation, ObservationSource, Step};
pub use orchestrator::{run_instance, RunDeps, RunError, RunResult, StopReason};
pub use selection::SelectionStrategy;
pub use table::{Table, TqaInstance};
