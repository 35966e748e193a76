//! Choosing one action among the planner's candidates.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenRequest, Sampler};
use crate::config::RunConfig;
use crate::fusion::canonicalize_value;
use crate::grammar::extract_rollout_answer;
use crate::model::{CandidateStep, Intent, MemoryState, Observation, ObservationSource, Step};
use crate::planning::planner_prompt;
use crate::prompt::{render_context, PromptError, TemplateKind};
use crate::tools::select_tool;
use crate::vote::mode_first;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Most frequent action among the candidates.
    Sc,
    /// A judge prompt names the best candidate.
    Llm,
    /// Highest mean token log-probability of the action.
    #[serde(rename = "logp")]
    LogP,
    /// Candidate whose continuation reaches the most common answer.
    #[serde(rename = "rollout")]
    RollOut,
    /// Majority over the four strategies above.
    Combined,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 5] = [
        SelectionStrategy::Sc,
        SelectionStrategy::Llm,
        SelectionStrategy::LogP,
        SelectionStrategy::RollOut,
        SelectionStrategy::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionStrategy::Sc => "sc",
            SelectionStrategy::Llm => "llm",
            SelectionStrategy::LogP => "logp",
            SelectionStrategy::RollOut => "rollout",
            SelectionStrategy::Combined => "combined",
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        Self::ALL
            .into_iter()
            .find(|st| st.name() == lower)
            .ok_or_else(|| format!("unknown selection strategy {s:?} (expected sc, llm, logp, rollout or combined)"))
    }
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error("candidate {0} has no action log-probability; the backend must report token logprobs")]
    MissingLogprobs(usize),
    #[error("judge reply names no candidate: {0:?}")]
    JudgeUnparsable(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// What selection needs besides the candidates.
pub struct SelectionContext<'a> {
    pub state: &'a MemoryState,
    pub config: &'a RunConfig,
    /// Used for roll-out continuations.
    pub planner: &'a Sampler,
    /// Used for judge prompts.
    pub judge: &'a Sampler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub index: usize,
    /// Picks of the individual strategies, for combined selection.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub picks: Vec<(SelectionStrategy, usize)>,
    /// Problems that made a strategy fall back to the frequency choice.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallbacks: Vec<String>,
}

/// Index of the most frequent action; ties go to the earliest sample.
pub fn sc_select(candidates: &[CandidateStep]) -> Result<usize, SelectionError> {
    mode_first(candidates.iter().map(|c| c.action.vote_key()))
        .map(|m| m.first_index)
        .ok_or(SelectionError::EmptyCandidates)
}

/// Index of the candidate with the highest action log-probability.
pub fn logp_select(candidates: &[CandidateStep]) -> Result<usize, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::EmptyCandidates);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let lp = c.action_logprob.ok_or(SelectionError::MissingLogprobs(i))?;
        if best.is_none_or(|(_, b)| lp > b) {
            best = Some((i, lp));
        }
    }
    Ok(best.expect("non-empty").0)
}

static JUDGE_CHOICE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)best action is\s*:?\s*#?(\d+)").unwrap());

/// Reads the 1-based candidate number from a judge reply; returns a 0-based index.
pub fn parse_judge_index(reply: &str, n_candidates: usize) -> Result<usize, SelectionError> {
    let number = JUDGE_CHOICE
        .captures_iter(reply)
        .last()
        .map(|c| c[1].to_string())
        .or_else(|| {
            let t = reply.trim().trim_end_matches('.');
            t.chars().all(|c| c.is_ascii_digit()).then(|| t.to_string())
        });
    match number.and_then(|n| n.parse::<usize>().ok()) {
        Some(n) if (1..=n_candidates).contains(&n) => Ok(n - 1),
        _ => Err(SelectionError::JudgeUnparsable(reply.chars().take(200).collect())),
    }
}

pub fn render_candidates(candidates: &[CandidateStep]) -> String {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. Thought: {}\n   Action: {}", i + 1, c.thought.trim(), c.action))
        .collect::<Vec<_>>()
        .join("\n")
}

fn llm_select(candidates: &[CandidateStep], ctx: &SelectionContext) -> Result<usize, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::EmptyCandidates);
    }
    let prompt = render_context(
        ctx.state,
        ctx.config.templates.get(TemplateKind::SelectJudge),
        &[("candidates", render_candidates(candidates))],
    )?;
    let request = GenRequest::new(prompt, ctx.config.tau_judge, 1).with_scope(Some(ctx.state.instance.id.clone()));
    let reply = ctx.judge.sample(&request)?;
    parse_judge_index(&reply[0].text, candidates.len())
}

/// Memory state as it would be after executing `candidate`, using its own
/// estimate as the observation.
pub fn hypothetical_state(state: &MemoryState, candidate: &CandidateStep) -> MemoryState {
    let mut next = state.clone();
    next.steps.push(Step {
        iteration: state.next_index(),
        thought: candidate.thought.clone(),
        selected_action: candidate.action.clone(),
        observation: Observation::new(
            candidate.estimated_observation.clone().unwrap_or_default(),
            ObservationSource::PlannerQuery,
        ),
        tool_kind: select_tool(candidate.action.intent, &candidate.action.instruction),
        llm_calls: 0,
    });
    next
}

fn rollout_select(candidates: &[CandidateStep], ctx: &SelectionContext) -> Result<usize, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::EmptyCandidates);
    }
    let mut answers: Vec<Option<String>> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let answer = if c.action.intent == Intent::Finish {
            Some(c.action.instruction.clone())
        } else {
            let hyp = hypothetical_state(ctx.state, c);
            let request = GenRequest::new(planner_prompt(&hyp, ctx.config)?, ctx.config.tau_p, 1)
                .with_scope(Some(ctx.state.instance.id.clone()));
            let reply = ctx.planner.sample(&request)?;
            extract_rollout_answer(&reply[0].text)
        };
        answers.push(answer.map(|a| canonicalize_value(&a)).filter(|a| !a.is_empty()));
    }
    let present: Vec<&String> = answers.iter().flatten().collect();
    match mode_first(present.iter()) {
        Some(m) => {
            let winner = present[m.first_index];
            Ok(answers
                .iter()
                .position(|a| a.as_ref() == Some(winner))
                .expect("winner is present"))
        }
        None => sc_select(candidates),
    }
}

/// Runs one strategy, falling back to the frequency choice when the judge
/// cannot be used. Missing log-probabilities are a configuration problem and
/// are returned as errors.
pub fn select_action(
    candidates: &[CandidateStep],
    strategy: SelectionStrategy,
    ctx: &SelectionContext,
) -> Result<SelectionOutcome, SelectionError> {
    let sc = sc_select(candidates)?;
    let mut fallbacks = Vec::new();
    let soft = |r: Result<usize, SelectionError>, fallbacks: &mut Vec<String>| match r {
        Ok(i) => Ok(i),
        Err(e @ (SelectionError::JudgeUnparsable(_) | SelectionError::Backend(_))) => {
            warn!("selection falls back to the most frequent action: {e}");
            fallbacks.push(e.to_string());
            Ok(sc)
        }
        Err(e) => Err(e),
    };
    let outcome = |index, picks, fallbacks| SelectionOutcome {
        index,
        picks,
        fallbacks,
    };
    match strategy {
        SelectionStrategy::Sc => Ok(outcome(sc, vec![], fallbacks)),
        SelectionStrategy::LogP => Ok(outcome(logp_select(candidates)?, vec![], fallbacks)),
        SelectionStrategy::Llm => {
            let i = soft(llm_select(candidates, ctx), &mut fallbacks)?;
            Ok(outcome(i, vec![], fallbacks))
        }
        SelectionStrategy::RollOut => {
            let i = soft(rollout_select(candidates, ctx), &mut fallbacks)?;
            Ok(outcome(i, vec![], fallbacks))
        }
        SelectionStrategy::Combined => {
            let mut picks = vec![(SelectionStrategy::Sc, sc)];
            picks.push((
                SelectionStrategy::Llm,
                soft(llm_select(candidates, ctx), &mut fallbacks)?,
            ));
            match logp_select(candidates) {
                Ok(i) => picks.push((SelectionStrategy::LogP, i)),
                Err(e @ SelectionError::MissingLogprobs(_)) => fallbacks.push(format!("logp left out: {e}")),
                Err(e) => return Err(e),
            }
            picks.push((
                SelectionStrategy::RollOut,
                soft(rollout_select(candidates, ctx), &mut fallbacks)?,
            ));
            let index = combine_picks(sc, picks.iter().map(|(_, i)| *i));
            Ok(outcome(index, picks, fallbacks))
        }
    }
}

/// Most frequent pick; the frequency choice wins any tie it is part of.
pub fn combine_picks(sc: usize, picks: impl IntoIterator<Item = usize>) -> usize {
    let picks: Vec<usize> = picks.into_iter().collect();
    let count = |i: usize| picks.iter().filter(|&&p| p == i).count();
    let best = picks.iter().map(|&p| count(p)).max().unwrap_or(0);
    if count(sc) == best {
        return sc;
    }
    *picks.iter().find(|&&p| count(p) == best).unwrap_or(&sc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CallCounter, ReplayBackend};
    use crate::model::Action;
    use crate::table::{Table, TqaInstance};
    use std::sync::Arc;

    fn cand(i: usize, intent: Intent, instr: &str) -> CandidateStep {
        CandidateStep {
            thought: format!("t{i}"),
            action: Action::new(intent, instr),
            estimated_observation: Some("1".into()),
            sample_index: i,
            action_logprob: None,
        }
    }

    fn ab(pattern: &str) -> Vec<CandidateStep> {
        pattern
            .chars()
            .enumerate()
            .map(|(i, ch)| cand(i, Intent::Retrieval, &ch.to_string()))
            .collect()
    }

    fn state() -> MemoryState {
        MemoryState::initial(TqaInstance {
            id: "s".into(),
            table: Table {
                header: vec!["x".into()],
                rows: vec![vec!["1".into()]],
            },
            question: "q".into(),
            texts: None,
            gold: None,
        })
    }

    fn sampler<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Sampler {
        Sampler::new(Arc::new(ReplayBackend::sequential(texts)), Arc::new(CallCounter::new()))
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in SelectionStrategy::ALL {
            assert_eq!(s.name().parse::<SelectionStrategy>().unwrap(), s);
        }
        assert_eq!("LOG_P".parse::<SelectionStrategy>().unwrap(), SelectionStrategy::LogP);
        assert_eq!(
            "ROLL_OUT".parse::<SelectionStrategy>().unwrap(),
            SelectionStrategy::RollOut
        );
        assert!("best".parse::<SelectionStrategy>().is_err());
    }

    #[test]
    fn sc_majority_and_ties() {
        assert_eq!(sc_select(&ab("ABACA")).unwrap(), 0);
        assert_eq!(sc_select(&ab("BABAC")).unwrap(), 0);
        assert_eq!(sc_select(&ab("CABAB")).unwrap(), 1);
        assert!(matches!(sc_select(&[]), Err(SelectionError::EmptyCandidates)));
    }

    #[test]
    fn sc_ignores_whitespace_differences() {
        let c = vec![
            cand(0, Intent::Retrieval, "a b"),
            cand(1, Intent::Retrieval, "c"),
            cand(2, Intent::Retrieval, "a  b"),
        ];
        assert_eq!(sc_select(&c).unwrap(), 0);
    }

    #[test]
    fn logp_argmax() {
        let mut c = ab("ABC");
        for (x, lp) in c.iter_mut().zip([-1.0, -0.2, -0.2]) {
            x.action_logprob = Some(lp);
        }
        assert_eq!(logp_select(&c).unwrap(), 1);
        c[2].action_logprob = None;
        assert!(matches!(logp_select(&c), Err(SelectionError::MissingLogprobs(2))));
    }

    #[test]
    fn judge_replies() {
        assert_eq!(parse_judge_index("Reasoning... The best action is 3.", 5).unwrap(), 2);
        assert_eq!(parse_judge_index("the BEST ACTION IS #2", 5).unwrap(), 1);
        assert_eq!(parse_judge_index(" 4 ", 5).unwrap(), 3);
        assert!(parse_judge_index("The best action is 6", 5).is_err());
        assert!(parse_judge_index("I cannot decide", 5).is_err());
        assert!(parse_judge_index("0", 5).is_err());
    }

    #[test]
    fn llm_selection_and_fallback() {
        let cfg = RunConfig::default();
        let st = state();
        let planner = sampler(Vec::<String>::new());
        let judge = sampler(["The best action is 2", "no idea"]);
        let ctx = SelectionContext {
            state: &st,
            config: &cfg,
            planner: &planner,
            judge: &judge,
        };
        let c = ab("AAB");
        let first = select_action(&c, SelectionStrategy::Llm, &ctx).unwrap();
        assert_eq!(first.index, 1);
        assert!(first.fallbacks.is_empty());
        let second = select_action(&c, SelectionStrategy::Llm, &ctx).unwrap();
        assert_eq!(second.index, 0);
        assert_eq!(second.fallbacks.len(), 1);
        assert_eq!(judge.calls(), 2);
    }

    #[test]
    fn rollout_prefers_the_majority_answer() {
        let cfg = RunConfig::default();
        let st = state();
        // Candidates 0 and 1 continue to answers 5 and 6; candidate 2 finishes with 6.
        let planner = sampler(["Thought 2: t\nAction 2: Finish[5]", "Thought 2: t\nAction 2: Finish[6]"]);
        let judge = sampler(Vec::<String>::new());
        let ctx = SelectionContext {
            state: &st,
            config: &cfg,
            planner: &planner,
            judge: &judge,
        };
        let c = vec![
            cand(0, Intent::Retrieval, "a"),
            cand(1, Intent::Retrieval, "b"),
            cand(2, Intent::Finish, "6"),
        ];
        assert_eq!(select_action(&c, SelectionStrategy::RollOut, &ctx).unwrap().index, 1);
        assert_eq!(planner.calls(), 2);
    }

    #[test]
    fn rollout_without_answers_uses_frequency() {
        let cfg = RunConfig::default();
        let st = state();
        let planner = sampler(["no answer", "still none", "nothing"]);
        let judge = sampler(Vec::<String>::new());
        let ctx = SelectionContext {
            state: &st,
            config: &cfg,
            planner: &planner,
            judge: &judge,
        };
        assert_eq!(
            select_action(&ab("BAA"), SelectionStrategy::RollOut, &ctx)
                .unwrap()
                .index,
            1
        );
    }

    #[test]
    fn combined_tie_goes_to_sc() {
        assert_eq!(combine_picks(0, [0, 1, 1, 0]), 0);
        assert_eq!(combine_picks(0, [0, 1, 1, 2]), 1);
        assert_eq!(combine_picks(0, [0, 1, 2, 3]), 0);
        assert_eq!(combine_picks(2, [2, 1, 1, 1]), 1);
    }

    #[test]
    fn combined_selection_records_picks() {
        let cfg = RunConfig::default();
        let st = state();
        let planner = sampler(["Action 2: Finish[9]", "Action 2: Finish[8]", "Action 2: Finish[8]"]);
        let judge = sampler(["The best action is 3"]);
        let ctx = SelectionContext {
            state: &st,
            config: &cfg,
            planner: &planner,
            judge: &judge,
        };
        let mut c = ab("ABB");
        for (x, lp) in c.iter_mut().zip([-0.1, -0.5, -0.9]) {
            x.action_logprob = Some(lp);
        }
        let out = select_action(&c, SelectionStrategy::Combined, &ctx).unwrap();
        // sc=1, llm=2, logp=0, rollout=1 → 1 has two votes.
        assert_eq!(out.picks.iter().map(|p| p.1).collect::<Vec<_>>(), [1, 2, 0, 1]);
        assert_eq!(out.index, 1);
    }
}
