//! Drives one instance: rollout shortcut, then the plan / select / execute /
//! observe loop until a Finish action or the iteration cap.

use std::collections::HashMap;
use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, CallCounter, Completion, ResponseCache, Sampler};
use crate::coding::{generate_code, CodingError};
use crate::config::{Ablation, RunConfig};
use crate::events::{TraceEvent, TraceLog};
use crate::fusion::{canonicalize_value, fuse_observation};
use crate::model::{Action, CandidateStep, Intent, MemoryState, Observation, ObservationSource, Step, NO_OBSERVATION};
use crate::planning::{
    answer_query, candidates_from_completions, generate_candidates, predictions_from, rollout_completions,
    CandidateBatch, PlanningError, RolloutPrediction,
};
use crate::selection::{select_action, SelectionContext, SelectionError};
use crate::table::{TableError, TqaInstance};
use crate::tools::{eval_formula, run_code, select_tool, ExecutionResult, KnowledgeSearch, ToolKind};
use crate::vote::mode_first;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid instance: {0}")]
    Instance(#[from] TableError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    Shortcut,
    Finish,
    MaxIterationsFallback,
    NoAnswer,
}

/// A recoverable failure met during a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunIssue {
    /// 0 for the rollout batch.
    pub iteration: usize,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub instance_id: String,
    pub answer: Option<String>,
    pub trace: MemoryState,
    pub stop_reason: StopReason,
    pub llm_calls: u64,
    pub per_step_tools: Vec<ToolKind>,
    /// Loop iterations used; a shortcut run counts as one.
    pub iterations: usize,
    pub rollout_answers: Vec<Option<String>>,
    /// Action chosen at the last allowed iteration, which is never executed.
    pub unexecuted_action: Option<Action>,
    pub errors: Vec<RunIssue>,
}

/// Backends and tools a run draws on.
#[derive(Clone)]
pub struct RunDeps {
    pub planner: Arc<dyn Backend>,
    pub coder: Arc<dyn Backend>,
    pub judge: Arc<dyn Backend>,
    pub search: Option<Arc<dyn KnowledgeSearch>>,
    pub cache: Option<Arc<ResponseCache>>,
}

impl RunDeps {
    /// One backend for every role, no search tool and no cache.
    pub fn single(backend: Arc<dyn Backend>) -> Self {
        Self {
            planner: backend.clone(),
            coder: backend.clone(),
            judge: backend,
            search: None,
            cache: None,
        }
    }

    pub fn with_search(mut self, search: Arc<dyn KnowledgeSearch>) -> Self {
        self.search = Some(search);
        self
    }
}

/// Shortcut answer if the most frequent rollout answer reaches `⌈alpha·k⌉`.
///
/// Answers are compared in canonical form; at least one answer is always
/// required.
pub fn shortcut_decision(answers: &[Option<String>], k: usize, alpha: f64) -> Option<String> {
    let canon: Vec<String> = answers
        .iter()
        .flatten()
        .map(|a| canonicalize_value(a))
        .filter(|a| !a.is_empty())
        .collect();
    let m = mode_first(canon.iter())?;
    let threshold = ((alpha * k as f64) - 1e-9).ceil().max(1.0) as usize;
    (m.count >= threshold).then(|| canon[m.first_index].clone())
}

/// Most frequent rollout answer, whatever its count.
pub fn rollout_mode(answers: &[Option<String>]) -> Option<String> {
    shortcut_decision(answers, 1, 0.0)
}

/// Samples the rollouts and applies [`shortcut_decision`].
pub fn try_shortcut(
    instance: &TqaInstance,
    config: &RunConfig,
    planner: &Sampler,
) -> Result<Option<String>, PlanningError> {
    let state = MemoryState::initial(instance.clone());
    let completions = rollout_completions(&state, config, planner)?;
    let answers: Vec<_> = predictions_from(&completions).into_iter().map(|p| p.answer).collect();
    Ok(shortcut_decision(&answers, config.k, config.alpha))
}

/// Total calls of a finished run.
pub fn count_llm_calls(result: &RunResult) -> u64 {
    result.llm_calls
}

struct Run<'a> {
    config: &'a RunConfig,
    deps: &'a RunDeps,
    log: &'a TraceLog,
    counter: Arc<CallCounter>,
    planner: Sampler,
    coder: Sampler,
    judge: Sampler,
    errors: Vec<RunIssue>,
}

impl Run<'_> {
    fn issue(&mut self, iteration: usize, stage: &str, message: impl ToString) {
        let message = message.to_string();
        warn!("iteration {iteration}, {stage}: {message}");
        self.errors.push(RunIssue {
            iteration,
            stage: stage.to_string(),
            message,
        });
    }

    fn candidates(&mut self, state: &MemoryState, reuse: Option<Vec<Completion>>, it: usize) -> CandidateBatch {
        if let Some(completions) = reuse {
            return candidates_from_completions(&completions, state.next_index());
        }
        match generate_candidates(state, self.config, &self.planner) {
            Ok(batch) => batch,
            Err(e) => {
                self.issue(it, "planner", e);
                CandidateBatch::default()
            }
        }
    }

    /// Executes the selected action and returns the observation and tool used.
    fn execute(
        &mut self,
        state: &MemoryState,
        chosen: &CandidateStep,
        candidates: &[CandidateStep],
        it: usize,
    ) -> Result<(Observation, ToolKind), RunError> {
        let action = &chosen.action;
        let estimates: Vec<Option<String>> = candidates.iter().map(|c| c.estimated_observation.clone()).collect();
        let fuse = |tool, output: Option<&str>, execs: &[_]| {
            fuse_observation(tool, output, &estimates, execs, &self.config.ablation)
                .map_err(|e| RunError::Config(e.to_string()))
        };
        let mut tool = select_tool(action.intent, &action.instruction);
        if tool == ToolKind::CalculatorTool && self.config.ablated(Ablation::NoCalculator) {
            tool = ToolKind::InterpreterTool;
        }
        match tool {
            ToolKind::CalculatorTool => match eval_formula(&action.instruction) {
                Ok(r) => {
                    self.log.push(TraceEvent::Tool {
                        iteration: it,
                        tool,
                        detail: format!("{} = {}", action.instruction, r.rendered),
                    });
                    return Ok((fuse(tool, Some(&r.rendered), &[])?, tool));
                }
                Err(e) => {
                    debug!("calculator declined {:?}: {e}", action.instruction);
                    self.log.push(TraceEvent::Tool {
                        iteration: it,
                        tool,
                        detail: format!("fell back to the interpreter: {e}"),
                    });
                    tool = ToolKind::InterpreterTool;
                }
            },
            ToolKind::SearchTool if self.config.ablated(Ablation::NoSearch) => {
                let obs = fuse(ToolKind::NoTool, None, &[])?;
                return Ok((
                    Observation {
                        source: ObservationSource::PlannerQuery,
                        ..obs
                    },
                    ToolKind::NoTool,
                ));
            }
            ToolKind::SearchTool => {
                let result = match &self.deps.search {
                    Some(s) => s.search(&action.instruction).map_err(|e| e.to_string()),
                    None => Err("no search tool configured".to_string()),
                };
                return match result {
                    Ok(text) => {
                        self.log.push(TraceEvent::Tool {
                            iteration: it,
                            tool,
                            detail: text.clone(),
                        });
                        Ok((fuse(tool, Some(&text), &[])?, tool))
                    }
                    Err(e) => {
                        self.issue(it, "search", &e);
                        Ok((
                            Observation::failure(NO_OBSERVATION, ObservationSource::DeterministicTool),
                            tool,
                        ))
                    }
                };
            }
            ToolKind::NoTool if matches!(action.intent, Intent::Read | Intent::Ask) => {
                return match answer_query(state, action.intent, &action.instruction, self.config, &self.planner) {
                    Ok(obs) => Ok((obs, tool)),
                    Err(e) => {
                        self.issue(it, "query", &e);
                        Ok((
                            Observation::failure(NO_OBSERVATION, ObservationSource::PlannerQuery),
                            tool,
                        ))
                    }
                };
            }
            _ => {}
        }
        if tool != ToolKind::InterpreterTool {
            return Ok((fuse(tool, None, &[])?, tool));
        }
        let mut executions = Vec::new();
        if !self.config.ablated(Ablation::NoCodingAgent) {
            match generate_code(state, action.intent, &action.instruction, self.config, &self.coder) {
                Ok(snippets) => {
                    // Identical snippets share one execution.
                    let mut seen: HashMap<&str, ExecutionResult> = HashMap::new();
                    for snippet in &snippets {
                        let result = seen
                            .entry(snippet.source.as_str())
                            .or_insert_with(|| run_code(snippet, &state.instance.table, &self.config.sandbox))
                            .clone();
                        self.log.push(TraceEvent::Tool {
                            iteration: it,
                            tool,
                            detail: format!(
                                "sample {}: {:?} {}",
                                snippet.sample_index,
                                result.status,
                                result.value.as_deref().unwrap_or(&result.detail)
                            ),
                        });
                        executions.push(result);
                    }
                }
                Err(CodingError::Backend(e)) => self.issue(it, "coder", e),
                Err(e) => return Err(RunError::Config(e.to_string())),
            }
        }
        Ok((fuse(tool, None, &executions)?, tool))
    }
}

fn selection_error(e: SelectionError) -> RunError {
    RunError::Config(e.to_string())
}

/// Runs one instance to completion. Backend, tool and sandbox failures are
/// recorded in the result; only configuration problems are returned as errors.
pub fn run_instance(instance: &TqaInstance, config: &RunConfig, deps: &RunDeps) -> Result<RunResult, RunError> {
    run_instance_logged(instance, config, deps, &TraceLog::new())
}

/// [`run_instance`] that also records every prompt, reply and decision in `log`.
pub fn run_instance_logged(
    instance: &TqaInstance,
    config: &RunConfig,
    deps: &RunDeps,
    log: &TraceLog,
) -> Result<RunResult, RunError> {
    config.validate().map_err(|e| RunError::Config(e.to_string()))?;
    instance.validate()?;
    let shared_log = Arc::new(TraceLog::new());
    let counter = Arc::new(CallCounter::new());
    let sampler = |backend: &Arc<dyn Backend>, role: &str| {
        Sampler::new(backend.clone(), counter.clone())
            .with_cache(deps.cache.clone())
            .with_log(role, shared_log.clone())
    };
    let mut run = Run {
        config,
        deps,
        log: &shared_log,
        planner: sampler(&deps.planner, "planner"),
        coder: sampler(&deps.coder, "coder"),
        judge: sampler(&deps.judge, "judge"),
        counter: counter.clone(),
        errors: Vec::new(),
    };
    let result = drive(&mut run, instance);
    for e in shared_log.events() {
        log.push(e);
    }
    result
}

fn drive(run: &mut Run, instance: &TqaInstance) -> Result<RunResult, RunError> {
    let config = run.config;
    let mut state = MemoryState::initial(instance.clone());

    let rollouts = match rollout_completions(&state, config, &run.planner) {
        Ok(c) => Some(c),
        Err(e) => {
            run.issue(0, "rollout", e);
            None
        }
    };
    let predictions: Vec<RolloutPrediction> = rollouts.as_deref().map(predictions_from).unwrap_or_default();
    let rollout_answers: Vec<Option<String>> = predictions.iter().map(|p| p.answer.clone()).collect();
    let shortcut = config
        .shortcut
        .then(|| shortcut_decision(&rollout_answers, config.k, config.alpha))
        .flatten();
    run.log.push(TraceEvent::Shortcut {
        answers: rollout_answers.clone(),
        fired: shortcut.is_some(),
    });
    let finish = |run: &mut Run, state: MemoryState, answer, stop_reason, iterations, unexecuted_action| RunResult {
        instance_id: instance.id.clone(),
        answer,
        per_step_tools: state.steps.iter().map(|s| s.tool_kind).collect(),
        trace: state,
        stop_reason,
        llm_calls: run.counter.get(),
        iterations,
        rollout_answers: rollout_answers.clone(),
        unexecuted_action,
        errors: std::mem::take(&mut run.errors),
    };
    if let Some(answer) = shortcut {
        return Ok(finish(run, state, Some(answer), StopReason::Shortcut, 1, None));
    }

    let mut reuse = rollouts;
    let mut unexecuted = None;
    let mut iterations = 0;
    for it in 1..=config.max_iterations {
        iterations = it;
        let before = run.counter.get();
        let batch = run.candidates(&state, reuse.take(), it);
        if batch.candidates.is_empty() {
            run.issue(it, "planner", "no valid candidate action");
            continue;
        }
        let outcome = {
            let ctx = SelectionContext {
                state: &state,
                config,
                planner: &run.planner,
                judge: &run.judge,
            };
            select_action(&batch.candidates, config.selection, &ctx).map_err(selection_error)?
        };
        for f in &outcome.fallbacks {
            run.issue(it, "selection", f);
        }
        let chosen = batch.candidates[outcome.index].clone();
        run.log.push(TraceEvent::Selected {
            iteration: it,
            candidates: batch.candidates.len(),
            index: outcome.index,
            action: chosen.action.clone(),
        });

        if chosen.action.intent == Intent::Finish {
            let answer = chosen.action.instruction.trim().to_string();
            let step = Step {
                iteration: it,
                thought: chosen.thought.clone(),
                selected_action: chosen.action.clone(),
                observation: Observation::new(answer.clone(), ObservationSource::PlannerQuery),
                tool_kind: ToolKind::NoTool,
                llm_calls: run.counter.get() - before,
            };
            state
                .append_step(step, config.max_iterations)
                .map_err(|e| RunError::Config(e.to_string()))?;
            return Ok(finish(run, state, Some(answer), StopReason::Finish, it, None));
        }
        if it == config.max_iterations {
            // Its observation could never be used.
            unexecuted = Some(chosen.action.clone());
            break;
        }
        let (observation, tool_kind) = run.execute(&state, &chosen, &batch.candidates, it)?;
        run.log.push(TraceEvent::Observed {
            iteration: it,
            observation: observation.clone(),
        });
        let step = Step {
            iteration: it,
            thought: chosen.thought.clone(),
            selected_action: chosen.action.clone(),
            observation,
            tool_kind,
            llm_calls: run.counter.get() - before,
        };
        state
            .append_step(step, config.max_iterations)
            .map_err(|e| RunError::Config(e.to_string()))?;
    }

    let answer = rollout_mode(&rollout_answers);
    let stop = if answer.is_some() {
        StopReason::MaxIterationsFallback
    } else {
        StopReason::NoAnswer
    };
    Ok(finish(run, state, answer, stop, iterations, unexecuted))
}
