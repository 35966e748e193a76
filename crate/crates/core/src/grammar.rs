//! Parsing of ReAct-style completions: `Thought i:`, `Action i:` and `Observation i:`.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::model::{Action, Intent};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("unknown intent {0:?}")]
    UnknownIntent(String),
    #[error("malformed brackets in action {0:?}")]
    MalformedBrackets(String),
    #[error("action {0:?} has an empty instruction")]
    EmptyInstruction(String),
    #[error("no action segment for iteration {0}")]
    NoActionFound(usize),
}

static MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[ \t]*(thought|action|observation)[ \t]*(\d+)?[ \t]*:").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SegmentKind {
    Thought,
    Action,
    Observation,
}

#[derive(Debug, Clone)]
struct Segment {
    kind: SegmentKind,
    number: Option<usize>,
    /// Byte range of the text following the marker, up to the next marker.
    body: Range<usize>,
}

fn segments(text: &str) -> Vec<Segment> {
    let markers: Vec<_> = MARKER.captures_iter(text).collect();
    markers
        .iter()
        .enumerate()
        .map(|(i, caps)| {
            let kind = match caps[1].to_ascii_lowercase().as_str() {
                "thought" => SegmentKind::Thought,
                "action" => SegmentKind::Action,
                _ => SegmentKind::Observation,
            };
            let number = caps.get(2).and_then(|m| m.as_str().parse().ok());
            let start = caps.get(0).unwrap().end();
            let end = markers
                .get(i + 1)
                .map(|next| next.get(0).unwrap().start())
                .unwrap_or(text.len());
            Segment {
                kind,
                number,
                body: start..end,
            }
        })
        .collect()
}

/// Parses `Intent[instruction]`.
///
/// The intent token is matched case-insensitively, with `Retrieve` and
/// `Calculate` accepted as aliases. The instruction runs to the last `]` on
/// the line holding the opening bracket and must itself be bracket-balanced.
pub fn parse_action(text: &str) -> Result<Action, GrammarError> {
    parse_action_span(text).map(|(action, _)| action)
}

/// Like [`parse_action`] but also returns the byte range of `Intent[...]` in `text`.
fn parse_action_span(text: &str) -> Result<(Action, Range<usize>), GrammarError> {
    let malformed = || GrammarError::MalformedBrackets(text.trim().to_string());
    let open = text.find('[').ok_or_else(malformed)?;
    let token = text[..open].trim().trim_matches(|c| c == '*' || c == '`').trim();
    let intent = Intent::from_token(token).ok_or_else(|| GrammarError::UnknownIntent(token.to_string()))?;

    let line_end = text[open..].find('\n').map(|i| open + i).unwrap_or(text.len());
    let close = text[open..line_end]
        .rfind(']')
        .or_else(|| text[open..].rfind(']'))
        .map(|i| open + i)
        .ok_or_else(malformed)?;
    let inner = &text[open + 1..close];
    let mut depth = 0i64;
    for c in inner.chars() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            return Err(malformed());
        }
    }
    if depth != 0 {
        return Err(malformed());
    }
    let instruction = inner.trim();
    if instruction.is_empty() {
        return Err(GrammarError::EmptyInstruction(text.trim().to_string()));
    }
    let start = text.len() - text.trim_start().len();
    Ok((Action::new(intent, instruction), start..close + 1))
}

/// The pieces of one planner sample for a given iteration index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCompletion {
    pub thought: String,
    pub action: Action,
    pub estimated_observation: Option<String>,
    /// Byte range of the action text within the completion.
    pub action_span: Range<usize>,
}

fn matches_index(seg: &Segment, kind: SegmentKind, index: usize) -> bool {
    seg.kind == kind && seg.number.is_none_or(|n| n == index)
}

/// Extracts the thought, action and estimated observation numbered `expected_iteration`.
pub fn parse_completion(text: &str, expected_iteration: usize) -> Result<ParsedCompletion, GrammarError> {
    let segs = segments(text);
    let body = |kind| {
        segs.iter()
            .find(|s| matches_index(s, kind, expected_iteration))
            .map(|s| s.body.clone())
    };
    let action_range = body(SegmentKind::Action).ok_or(GrammarError::NoActionFound(expected_iteration))?;
    let (action, span) = parse_action_span(&text[action_range.clone()])?;
    let thought = body(SegmentKind::Thought)
        .map(|r| text[r].trim().to_string())
        .unwrap_or_default();
    let estimated_observation = body(SegmentKind::Observation)
        .map(|r| text[r].trim().to_string())
        .filter(|o| !o.is_empty());
    Ok(ParsedCompletion {
        thought,
        action,
        estimated_observation,
        action_span: action_range.start + span.start..action_range.start + span.end,
    })
}

/// Instruction of the first parsable `Finish` action in a full rollout.
pub fn extract_rollout_answer(rollout: &str) -> Option<String> {
    segments(rollout)
        .iter()
        .filter(|s| s.kind == SegmentKind::Action)
        .filter_map(|s| parse_action(&rollout[s.body.clone()]).ok())
        .find(|a| a.intent == Intent::Finish)
        .map(|a| a.instruction)
}

/// Writes a parsed completion back out in the grammar `parse_completion` reads.
pub fn format_completion(parsed: &ParsedCompletion, index: usize) -> String {
    let mut out = format!("Thought {index}: {}\nAction {index}: {}", parsed.thought, parsed.action);
    if let Some(obs) = &parsed.estimated_observation {
        out.push_str(&format!("\nObservation {index}: {obs}"));
    }
    out
}
