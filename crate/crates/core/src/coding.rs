//! The coding agent: turns Retrieval/Calculation instructions into snippets.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Completion, GenRequest, Sampler};
use crate::config::RunConfig;
use crate::model::{Intent, MemoryState};
use crate::prompt::{render_context, PromptError, TemplateKind};
use crate::tools::TABLE_PATH_ENV;

#[derive(Debug, Error)]
pub enum CodingError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{0} actions are not handled by the coding agent")]
    WrongIntent(Intent),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeCandidate {
    pub source: String,
    pub sample_index: usize,
}

static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z0-9_+-]*[^\n]*\n(.*?)```").unwrap());

/// Code inside the first fenced block, or the whole reply when unfenced.
pub fn extract_code(text: &str) -> Option<String> {
    let code = match FENCE.captures(text) {
        Some(c) => c[1].to_string(),
        None => text.to_string(),
    };
    let code = code.trim_matches('\n').to_string();
    (!code.trim().is_empty()).then_some(code)
}

/// Earlier observations, one per line, for the coder prompt.
fn render_observations(state: &MemoryState) -> String {
    if state.steps.is_empty() {
        return "(none)".into();
    }
    state
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {} -> {}", i + 1, s.selected_action, s.observation.text.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn coder_prompt(
    state: &MemoryState,
    intent: Intent,
    instruction: &str,
    config: &RunConfig,
) -> Result<String, CodingError> {
    let kind = match intent {
        Intent::Retrieval => TemplateKind::CoderRetrieval,
        Intent::Calculation => TemplateKind::CoderCalculation,
        other => return Err(CodingError::WrongIntent(other)),
    };
    Ok(render_context(
        state,
        config.templates.get(kind),
        &[
            ("instruction", instruction.to_string()),
            ("observations", render_observations(state)),
            ("table_env", TABLE_PATH_ENV.to_string()),
        ],
    )?)
}

pub fn candidates_from_code(completions: &[Completion]) -> Vec<CodeCandidate> {
    completions
        .iter()
        .enumerate()
        .filter_map(|(sample_index, c)| extract_code(&c.text).map(|source| CodeCandidate { source, sample_index }))
        .collect()
}

/// Samples `k` snippets for the instruction; replies without code are dropped.
pub fn generate_code(
    state: &MemoryState,
    intent: Intent,
    instruction: &str,
    config: &RunConfig,
    coder: &Sampler,
) -> Result<Vec<CodeCandidate>, CodingError> {
    let prompt = coder_prompt(state, intent, instruction, config)?;
    let request = GenRequest::new(prompt, config.tau_c, config.k).with_scope(Some(state.instance.id.clone()));
    Ok(candidates_from_code(&coder.sample(&request)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CallCounter, ReplayBackend};
    use crate::table::{Table, TqaInstance};
    use std::sync::Arc;

    fn state() -> MemoryState {
        MemoryState::initial(TqaInstance {
            id: "c".into(),
            table: Table {
                header: vec!["a".into()],
                rows: vec![vec!["1".into()]],
            },
            question: "q".into(),
            texts: None,
            gold: None,
        })
    }

    #[test]
    fn fenced_and_bare_code() {
        assert_eq!(
            extract_code("Here:\n```python\nprint(1)\n```\nand ```\nprint(2)\n```").as_deref(),
            Some("print(1)")
        );
        assert_eq!(extract_code("print(3)\n").as_deref(), Some("print(3)"));
        assert_eq!(extract_code("```python\n\n```"), None);
        assert_eq!(extract_code("   "), None);
    }

    #[test]
    fn generates_k_snippets_and_drops_empty_ones() {
        let s = Sampler::new(
            Arc::new(ReplayBackend::sequential([
                "```python\nprint(1)\n```",
                "",
                "print(2)",
                " ",
                "print(3)",
            ])),
            Arc::new(CallCounter::new()),
        );
        let code = generate_code(&state(), Intent::Retrieval, "first value", &RunConfig::default(), &s).unwrap();
        let idx: Vec<_> = code.iter().map(|c| c.sample_index).collect();
        assert_eq!(idx, [0, 2, 4]);
        assert_eq!(s.calls(), 5);
    }

    #[test]
    fn wrong_intent_costs_nothing() {
        let s = Sampler::new(
            Arc::new(ReplayBackend::sequential(["x"; 5])),
            Arc::new(CallCounter::new()),
        );
        let err = generate_code(&state(), Intent::Search, "Tesla", &RunConfig::default(), &s).unwrap_err();
        assert!(matches!(err, CodingError::WrongIntent(Intent::Search)));
        assert_eq!(s.calls(), 0);
    }

    #[test]
    fn prompt_mentions_the_table_variable() {
        let p = coder_prompt(&state(), Intent::Calculation, "sum a", &RunConfig::default()).unwrap();
        assert!(p.contains(TABLE_PATH_ENV));
        assert!(p.contains("sum a"));
    }
}
