//! Turning tool results and planner estimates into the step's observation.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::config::{Ablation, AblationSet};
use crate::model::{collapse_whitespace, Observation, ObservationSource, NO_OBSERVATION};
use crate::tools::calculator::{lex_number, render_rational};
use crate::tools::{ExecStatus, ExecutionResult, ToolKind};
use crate::vote::mode_first;

static NUMERIC: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)?(?:\.\d+)?$").unwrap());

/// Canonical form of a value for vote counting.
///
/// Collapses whitespace, strips trailing periods, and re-renders plain numbers
/// (thousands commas allowed) with the calculator's rendering rule.
pub fn canonicalize_value(text: &str) -> String {
    let mut s = collapse_whitespace(text);
    while s.ends_with('.') {
        s.pop();
        s.truncate(s.trim_end().len());
    }
    if NUMERIC.is_match(&s) && s.bytes().any(|b| b.is_ascii_digit()) {
        let (negative, body) = match s.as_bytes()[0] {
            b'-' => (true, &s[1..]),
            b'+' => (false, &s[1..]),
            _ => (false, s.as_str()),
        };
        if let Some((value, len)) = lex_number(body) {
            if len == body.len() {
                return render_rational(&if negative { -value } else { value });
            }
        }
    }
    s
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FusionError {
    #[error("{tool:?} requires a tool output exactly when it is deterministic")]
    ToolOutputMismatch { tool: ToolKind },
}

/// Computes the final observation of a step.
///
/// Calculator and search results are taken as is. Interpreter steps vote over
/// the present planner estimates followed by the successful execution
/// outputs; ties go to the earliest vote. Steps without a tool vote over the
/// estimates alone, as do interpreter steps when the coding agent is ablated.
pub fn fuse_observation(
    tool: ToolKind,
    tool_output: Option<&str>,
    estimates: &[Option<String>],
    executions: &[ExecutionResult],
    ablation: &AblationSet,
) -> Result<Observation, FusionError> {
    let deterministic = matches!(tool, ToolKind::CalculatorTool | ToolKind::SearchTool);
    if deterministic != tool_output.is_some() {
        return Err(FusionError::ToolOutputMismatch { tool });
    }
    if let Some(out) = tool_output {
        return Ok(Observation::new(out.trim(), ObservationSource::DeterministicTool));
    }
    let use_executions = tool == ToolKind::InterpreterTool && !ablation.contains(&Ablation::NoCodingAgent);
    let mut votes: Vec<String> = estimates.iter().flatten().map(|e| canonicalize_value(e)).collect();
    if use_executions {
        votes.extend(
            executions
                .iter()
                .filter(|r| r.status == ExecStatus::Ok)
                .filter_map(|r| r.value.as_deref())
                .map(canonicalize_value),
        );
    }
    votes.retain(|v| !v.is_empty());
    Ok(match mode_first(votes.iter()) {
        Some(m) => Observation::new(votes[m.first_index].clone(), ObservationSource::MajorityVote),
        None => Observation::failure(NO_OBSERVATION, ObservationSource::MajorityVote),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(v: &str) -> ExecutionResult {
        ExecutionResult {
            status: ExecStatus::Ok,
            value: Some(v.into()),
            detail: String::new(),
        }
    }

    fn failed() -> ExecutionResult {
        ExecutionResult {
            status: ExecStatus::ExecError,
            value: None,
            detail: "boom".into(),
        }
    }

    fn est(v: &[&str]) -> Vec<Option<String>> {
        v.iter().map(|s| Some(s.to_string())).collect()
    }

    #[test]
    fn canonical_values() {
        assert_eq!(canonicalize_value("  1,000 "), "1000");
        assert_eq!(canonicalize_value("0.15560"), "0.1556");
        assert_eq!(canonicalize_value("Paris."), "Paris");
        assert_eq!(canonicalize_value("Paris . . "), "Paris");
        assert_eq!(canonicalize_value("New   York"), "New York");
        assert_eq!(canonicalize_value("-0.0"), "0");
        assert_eq!(canonicalize_value("+007"), "7");
        assert_eq!(canonicalize_value("12."), "12");
        assert_eq!(canonicalize_value("1,00"), "1,00");
        assert_eq!(canonicalize_value("5%"), "5%");
        assert_eq!(canonicalize_value("..."), "");
        assert_eq!(canonicalize_value("-"), "-");
    }

    #[test]
    fn interpreter_majority() {
        let mut exec: Vec<_> = (0..4).map(|_| ok("21")).collect();
        exec.push(failed());
        let obs = fuse_observation(
            ToolKind::InterpreterTool,
            None,
            &est(&["21", "20", "21", "21", "21"]),
            &exec,
            &AblationSet::new(),
        )
        .unwrap();
        assert_eq!(obs.text, "21");
        assert_eq!(obs.source, ObservationSource::MajorityVote);
    }

    #[test]
    fn calculator_ignores_estimates() {
        let obs = fuse_observation(
            ToolKind::CalculatorTool,
            Some("0.1556"),
            &est(&["0.2"; 5]),
            &[],
            &AblationSet::new(),
        )
        .unwrap();
        assert_eq!(obs, Observation::new("0.1556", ObservationSource::DeterministicTool));
    }

    #[test]
    fn no_tool_votes_over_estimates() {
        let obs = fuse_observation(
            ToolKind::NoTool,
            None,
            &est(&["2019", "2019", "2018", "2019", "2019"]),
            &[ok("2018"), ok("2018"), ok("2018"), ok("2018"), ok("2018")],
            &AblationSet::new(),
        )
        .unwrap();
        assert_eq!(obs.text, "2019");
    }

    #[test]
    fn ties_prefer_estimates_then_sample_order() {
        let obs = fuse_observation(
            ToolKind::InterpreterTool,
            None,
            &[None, Some("b".into())],
            &[ok("a"), ok("b"), ok("a")],
            &AblationSet::new(),
        )
        .unwrap();
        // b: 2 votes (estimate 1, execution 1); a: 2 votes (executions 0, 2); b came first.
        assert_eq!(obs.text, "b");
    }

    #[test]
    fn ablated_coder_drops_execution_votes() {
        let ablation = AblationSet::from([Ablation::NoCodingAgent]);
        let obs = fuse_observation(
            ToolKind::InterpreterTool,
            None,
            &est(&["7", "8", "8"]),
            &[ok("7"), ok("7"), ok("7")],
            &ablation,
        )
        .unwrap();
        assert_eq!(obs.text, "8");
    }

    #[test]
    fn no_votes_gives_the_failure_sentinel() {
        let obs = fuse_observation(
            ToolKind::InterpreterTool,
            None,
            &[None, None],
            &[failed(), failed()],
            &AblationSet::new(),
        )
        .unwrap();
        assert!(obs.failed);
        assert_eq!(obs.text, NO_OBSERVATION);
    }

    #[test]
    fn tool_output_must_match_tool_kind() {
        let none = AblationSet::new();
        assert!(fuse_observation(ToolKind::SearchTool, None, &[], &[], &none).is_err());
        assert!(fuse_observation(ToolKind::NoTool, Some("x"), &[], &[], &none).is_err());
    }
}
