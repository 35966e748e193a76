//! Prompt templates with `{placeholder}` substitution.
//!
//! A template is opaque text. Only `{name}` tokens whose name is a lowercase
//! identifier are placeholders; `{{` and `}}` produce literal braces, and any
//! other brace (dict literals in code exemplars, say) passes through as is.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::MemoryState;
use crate::table::{serialize_table, TableError};

/// Placeholders every context-rendering template may use.
pub const CONTEXT_PLACEHOLDERS: [&str; 4] = ["table", "question", "texts", "trace"];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("failed to read template {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(String),
}

/// A parsed prompt template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn parse(source: impl Into<String>) -> Self {
        let source = source.into();
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let chars: Vec<char> = source.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if (c == '{' || c == '}') && chars.get(i + 1) == Some(&c) {
                literal.push(c);
                i += 2;
                continue;
            }
            if c == '{' {
                if let Some(len) = slot_len(&chars[i + 1..]) {
                    if !literal.is_empty() {
                        pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                    }
                    pieces.push(Piece::Slot(chars[i + 1..i + 1 + len].iter().collect()));
                    i += len + 2;
                    continue;
                }
            }
            literal.push(c);
            i += 1;
        }
        if !literal.is_empty() {
            pieces.push(Piece::Literal(literal));
        }
        Self { source, pieces }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(name) => Some(name.as_str()),
            Piece::Literal(_) => None,
        })
    }

    /// Fails if the template uses a placeholder outside `allowed`.
    pub fn check(&self, allowed: &[&str]) -> Result<(), PromptError> {
        match self.placeholders().find(|p| !allowed.contains(p)) {
            Some(p) => Err(PromptError::UnknownPlaceholder(p.to_string())),
            None => Ok(()),
        }
    }

    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.source.len());
        for piece in &self.pieces {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(name) => match vars.get(name.as_str()) {
                    Some(v) => out.push_str(v),
                    None => return Err(PromptError::UnknownPlaceholder(name.clone())),
                },
            }
        }
        Ok(out)
    }
}

/// Length of an identifier followed by `}`, if `rest` starts with one.
fn slot_len(rest: &[char]) -> Option<usize> {
    let len = rest
        .iter()
        .take_while(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || **c == '_')
        .count();
    let starts_ok = rest.first().is_some_and(|c| c.is_ascii_lowercase() || *c == '_');
    (starts_ok && rest.get(len) == Some(&'}')).then_some(len)
}

/// Renders the passages as `Passage i: ...` lines, or an empty string.
pub fn render_texts(passages: &[String]) -> String {
    passages
        .iter()
        .enumerate()
        .map(|(i, p)| format!("Passage {}: {}", i + 1, p.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders the memory steps as numbered Thought / Action / Observation blocks.
pub fn render_trace(state: &MemoryState) -> String {
    let mut out = String::new();
    for (i, step) in state.steps.iter().enumerate() {
        let n = i + 1;
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!(
            "Thought {n}: {}\nAction {n}: {}\nObservation {n}: {}",
            step.thought.trim(),
            step.selected_action,
            step.observation.text.trim()
        ));
    }
    out
}

/// Substitutes the memory state (and any caller-supplied extras) into a template.
pub fn render_context(
    state: &MemoryState,
    template: &PromptTemplate,
    extra: &[(&str, String)],
) -> Result<String, PromptError> {
    let mut vars: BTreeMap<&str, String> = BTreeMap::new();
    vars.insert("table", serialize_table(&state.instance.table)?);
    vars.insert("question", state.instance.question.trim().to_string());
    vars.insert("texts", render_texts(state.instance.passages()));
    vars.insert("trace", render_trace(state));
    for (k, v) in extra {
        vars.insert(k, v.clone());
    }
    template.render(&vars)
}

/// Which prompt a template serves; also the asset file stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Planner,
    CoderRetrieval,
    CoderCalculation,
    Read,
    Ask,
    SelectJudge,
    EquivalenceJudge,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 7] = [
        TemplateKind::Planner,
        TemplateKind::CoderRetrieval,
        TemplateKind::CoderCalculation,
        TemplateKind::Read,
        TemplateKind::Ask,
        TemplateKind::SelectJudge,
        TemplateKind::EquivalenceJudge,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            TemplateKind::Planner => "planner",
            TemplateKind::CoderRetrieval => "coder_retrieval",
            TemplateKind::CoderCalculation => "coder_calculation",
            TemplateKind::Read => "read",
            TemplateKind::Ask => "ask",
            TemplateKind::SelectJudge => "select_judge",
            TemplateKind::EquivalenceJudge => "equivalence_judge",
        }
    }

    /// Placeholders the caller supplies on top of the context ones.
    pub fn extra_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateKind::Planner => &["next"],
            TemplateKind::CoderRetrieval | TemplateKind::CoderCalculation => {
                &["instruction", "observations", "table_env"]
            }
            TemplateKind::Read | TemplateKind::Ask => &["instruction"],
            TemplateKind::SelectJudge => &["candidates"],
            TemplateKind::EquivalenceJudge => &["prediction", "reference"],
        }
    }

    fn default_source(self) -> &'static str {
        match self {
            TemplateKind::Planner => include_str!("../assets/templates/planner.txt"),
            TemplateKind::CoderRetrieval => include_str!("../assets/templates/coder_retrieval.txt"),
            TemplateKind::CoderCalculation => {
                include_str!("../assets/templates/coder_calculation.txt")
            }
            TemplateKind::Read => include_str!("../assets/templates/read.txt"),
            TemplateKind::Ask => include_str!("../assets/templates/ask.txt"),
            TemplateKind::SelectJudge => include_str!("../assets/templates/select_judge.txt"),
            TemplateKind::EquivalenceJudge => {
                include_str!("../assets/templates/equivalence_judge.txt")
            }
        }
    }

    fn allowed(self) -> Vec<&'static str> {
        let mut allowed = CONTEXT_PLACEHOLDERS.to_vec();
        allowed.extend_from_slice(self.extra_placeholders());
        allowed
    }
}

/// The full set of prompts used by one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateKind, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = TemplateKind::ALL
            .iter()
            .map(|k| (*k, PromptTemplate::parse(k.default_source())))
            .collect();
        Self { templates }
    }
}

impl TemplateSet {
    /// Loads `<dir>/<stem>.txt` for each kind present, keeping built-in defaults for the rest.
    ///
    /// When `dataset` is given, `<dir>/<dataset>/<stem>.txt` takes precedence.
    pub fn load(dir: &Path, dataset: Option<&str>) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for kind in TemplateKind::ALL {
            let file = format!("{}.txt", kind.file_stem());
            let mut candidates = Vec::new();
            if let Some(ds) = dataset {
                candidates.push(dir.join(ds).join(&file));
            }
            candidates.push(dir.join(&file));
            if let Some(path) = candidates.into_iter().find(|p| p.is_file()) {
                let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                set.set(kind, PromptTemplate::parse(text))?;
            }
        }
        Ok(set)
    }

    pub fn set(&mut self, kind: TemplateKind, template: PromptTemplate) -> Result<(), PromptError> {
        template.check(&kind.allowed())?;
        self.templates.insert(kind, template);
        Ok(())
    }

    pub fn get(&self, kind: TemplateKind) -> &PromptTemplate {
        &self.templates[&kind]
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for (kind, t) in &self.templates {
            t.check(&kind.allowed())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, Intent, Observation, ObservationSource, Step};
    use crate::table::{Table, TqaInstance};
    use crate::tools::ToolKind;

    fn state() -> MemoryState {
        MemoryState::initial(TqaInstance {
            id: "toy".into(),
            table: Table {
                header: vec!["Country".into(), "Exports".into()],
                rows: vec![vec!["France".into(), "135".into()]],
            },
            question: "What did France export?".into(),
            texts: Some(vec!["First passage.".into(), " Second. ".into()]),
            gold: None,
        })
    }

    fn step(n: usize, obs: &str) -> Step {
        Step {
            iteration: n,
            thought: format!("think {n}"),
            selected_action: Action::new(Intent::Retrieval, format!("item {n}")),
            observation: Observation::new(obs, ObservationSource::MajorityVote),
            tool_kind: ToolKind::InterpreterTool,
            llm_calls: 10,
        }
    }

    #[test]
    fn substitutes_question_and_table() {
        let t = PromptTemplate::parse("Q: {question}\n{table}");
        assert_eq!(
            render_context(&state(), &t, &[]).unwrap(),
            "Q: What did France export?\nCountry | Exports\nFrance | 135"
        );
    }

    #[test]
    fn trace_blocks_in_step_order() {
        let mut s = state();
        s.append_step(step(1, "135"), 7).unwrap();
        s.append_step(step(2, "114"), 7).unwrap();
        let out = render_context(&s, &PromptTemplate::parse("{trace}"), &[]).unwrap();
        assert_eq!(
            out,
            "Thought 1: think 1\nAction 1: Retrieval[item 1]\nObservation 1: 135\n\
             Thought 2: think 2\nAction 2: Retrieval[item 2]\nObservation 2: 114"
        );
        assert!(out.find("Observation 1").unwrap() < out.find("Observation 2").unwrap());
    }

    #[test]
    fn unknown_placeholder_is_an_error() {
        let t = PromptTemplate::parse("hello {oops}");
        assert!(matches!(
            render_context(&state(), &t, &[]),
            Err(PromptError::UnknownPlaceholder(p)) if p == "oops"
        ));
    }

    #[test]
    fn passages_follow_numbering() {
        let out = render_context(&state(), &PromptTemplate::parse("{texts}"), &[]).unwrap();
        assert_eq!(out, "Passage 1: First passage.\nPassage 2: Second.");
    }

    #[test]
    fn braces_that_are_not_placeholders_pass_through() {
        let t = PromptTemplate::parse("d = {'a': 1}; f\"{{x}}\" {Question} {question}");
        let out = render_context(&state(), &t, &[]).unwrap();
        assert_eq!(out, "d = {'a': 1}; f\"{x}\" {Question} What did France export?");
    }

    #[test]
    fn extras_are_substituted() {
        let t = PromptTemplate::parse("{instruction}!");
        let out = render_context(&state(), &t, &[("instruction", "go".into())]).unwrap();
        assert_eq!(out, "go!");
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = PromptTemplate::parse("{table}\n{texts}\n{question}\n{trace}");
        let mut s = state();
        s.append_step(step(1, "x"), 7).unwrap();
        assert_eq!(
            render_context(&s, &t, &[]).unwrap(),
            render_context(&s, &t, &[]).unwrap()
        );
    }

    #[test]
    fn default_templates_are_valid() {
        TemplateSet::default().validate().unwrap();
    }

    #[test]
    fn set_rejects_foreign_placeholders() {
        let mut set = TemplateSet::default();
        let err = set
            .set(TemplateKind::Ask, PromptTemplate::parse("{candidates}"))
            .unwrap_err();
        assert!(matches!(err, PromptError::UnknownPlaceholder(_)));
    }

    #[test]
    fn load_prefers_dataset_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("wtq")).unwrap();
        std::fs::write(dir.path().join("ask.txt"), "generic {instruction}").unwrap();
        std::fs::write(dir.path().join("wtq/ask.txt"), "wtq {instruction}").unwrap();
        let set = TemplateSet::load(dir.path(), Some("wtq")).unwrap();
        assert_eq!(set.get(TemplateKind::Ask).source(), "wtq {instruction}");
        let set = TemplateSet::load(dir.path(), None).unwrap();
        assert_eq!(set.get(TemplateKind::Ask).source(), "generic {instruction}");
    }
}
