//! The planning agent: candidate steps, full rollouts, and Read/Ask queries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Completion, GenRequest, Sampler};
use crate::config::RunConfig;
use crate::fusion::canonicalize_value;
use crate::grammar::{extract_rollout_answer, parse_completion, GrammarError};
use crate::model::{CandidateStep, Intent, MemoryState, Observation, ObservationSource, NO_OBSERVATION};
use crate::prompt::{render_context, PromptError, TemplateKind};
use crate::vote::mode_first;

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("Read needs passages but instance {0:?} has none")]
    MissingTexts(String),
    #[error("{0} is not answered by the planner")]
    NotAQuery(Intent),
    #[error("rollouts start from the initial state, which has no steps")]
    NotInitialState,
}

/// A completion that did not yield a usable candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSample {
    pub sample_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateBatch {
    pub candidates: Vec<CandidateStep>,
    pub dropped: Vec<DroppedSample>,
}

/// Answer extracted from one full planner trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutPrediction {
    pub answer: Option<String>,
    pub raw_trace: String,
    pub sample_index: usize,
}

/// Renders the planner prompt for the state's next step.
pub fn planner_prompt(state: &MemoryState, config: &RunConfig) -> Result<String, PromptError> {
    render_context(
        state,
        config.templates.get(TemplateKind::Planner),
        &[("next", state.next_index().to_string())],
    )
}

/// Mean log-probability of the tokens overlapping `span`.
///
/// When the tokens do not spell out the completion text the whole completion
/// is averaged instead.
fn span_mean_logprob(completion: &Completion, span: &std::ops::Range<usize>) -> Option<f64> {
    let tokens = completion.token_logprobs.as_ref()?;
    if tokens.is_empty() {
        return None;
    }
    let spelled: String = tokens.iter().map(|(t, _)| t.as_str()).collect();
    let selected: Vec<f64> = if spelled == completion.text {
        let mut offset = 0;
        tokens
            .iter()
            .filter_map(|(t, lp)| {
                let range = offset..offset + t.len();
                offset = range.end;
                (range.start < span.end && span.start < range.end).then_some(*lp)
            })
            .collect()
    } else {
        tokens.iter().map(|(_, lp)| *lp).collect()
    };
    (!selected.is_empty()).then(|| selected.iter().sum::<f64>() / selected.len() as f64)
}

/// Parses sampled completions into candidates for step `expected_iteration`.
pub fn candidates_from_completions(completions: &[Completion], expected_iteration: usize) -> CandidateBatch {
    let mut batch = CandidateBatch::default();
    for (sample_index, completion) in completions.iter().enumerate() {
        match parse_completion(&completion.text, expected_iteration) {
            Ok(parsed) => batch.candidates.push(CandidateStep {
                action_logprob: span_mean_logprob(completion, &parsed.action_span),
                thought: parsed.thought,
                action: parsed.action,
                estimated_observation: parsed.estimated_observation,
                sample_index,
            }),
            Err(e) => batch.dropped.push(DroppedSample {
                sample_index,
                reason: e.to_string(),
            }),
        }
    }
    batch
}

/// Samples `k` planner continuations of `state` and parses them.
///
/// An empty candidate list means the planner produced no valid action this
/// iteration.
pub fn generate_candidates(
    state: &MemoryState,
    config: &RunConfig,
    planner: &Sampler,
) -> Result<CandidateBatch, PlanningError> {
    let next = state.next_index();
    let request = GenRequest::new(planner_prompt(state, config)?, config.tau_p, config.k)
        .with_scope(Some(state.instance.id.clone()))
        .with_stop(vec![format!("\nThought {}:", next + 1)]);
    let completions = planner.sample(&request)?;
    Ok(candidates_from_completions(&completions, next))
}

/// Samples `k` full traces from the initial state.
pub fn rollout_completions(
    initial: &MemoryState,
    config: &RunConfig,
    planner: &Sampler,
) -> Result<Vec<Completion>, PlanningError> {
    if !initial.steps.is_empty() {
        return Err(PlanningError::NotInitialState);
    }
    let request = GenRequest::new(planner_prompt(initial, config)?, config.tau_p, config.k)
        .with_scope(Some(initial.instance.id.clone()));
    Ok(planner.sample(&request)?)
}

pub fn predictions_from(completions: &[Completion]) -> Vec<RolloutPrediction> {
    completions
        .iter()
        .enumerate()
        .map(|(sample_index, c)| RolloutPrediction {
            answer: extract_rollout_answer(&c.text),
            raw_trace: c.text.clone(),
            sample_index,
        })
        .collect()
}

/// `k` rollout answers from the initial state; absent answers stay `None`.
pub fn rollout_predictions(
    initial: &MemoryState,
    config: &RunConfig,
    planner: &Sampler,
) -> Result<Vec<RolloutPrediction>, PlanningError> {
    Ok(predictions_from(&rollout_completions(initial, config, planner)?))
}

/// Strips a leading `Answer:` label and keeps the first non-empty line.
fn query_answer(text: &str) -> String {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let line = match line.get(..7) {
        Some(p) if p.eq_ignore_ascii_case("answer:") => line[7..].trim(),
        _ => line,
    };
    canonicalize_value(line)
}

/// Answers a Read or Ask instruction by majority over `k` planner samples.
pub fn answer_query(
    state: &MemoryState,
    intent: Intent,
    instruction: &str,
    config: &RunConfig,
    planner: &Sampler,
) -> Result<Observation, PlanningError> {
    let kind = match intent {
        Intent::Read => TemplateKind::Read,
        Intent::Ask => TemplateKind::Ask,
        other => return Err(PlanningError::NotAQuery(other)),
    };
    if intent == Intent::Read && state.instance.passages().iter().all(|p| p.trim().is_empty()) {
        return Err(PlanningError::MissingTexts(state.instance.id.clone()));
    }
    let prompt = render_context(
        state,
        config.templates.get(kind),
        &[("instruction", instruction.to_string())],
    )?;
    let request = GenRequest::new(prompt, config.tau_p, config.k).with_scope(Some(state.instance.id.clone()));
    let answers: Vec<String> = planner
        .sample(&request)?
        .iter()
        .map(|c| query_answer(&c.text))
        .filter(|a| !a.is_empty())
        .collect();
    Ok(match mode_first(answers.iter()) {
        Some(m) => Observation::new(answers[m.first_index].clone(), ObservationSource::PlannerQuery),
        None => Observation::failure(NO_OBSERVATION, ObservationSource::PlannerQuery),
    })
}

/// True if the error means the completion lacked a usable action.
pub fn is_invalid_action(e: &GrammarError) -> bool {
    matches!(
        e,
        GrammarError::NoActionFound(_)
            | GrammarError::UnknownIntent(_)
            | GrammarError::MalformedBrackets(_)
            | GrammarError::EmptyInstruction(_)
    )
}
