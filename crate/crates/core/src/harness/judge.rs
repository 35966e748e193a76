//! Semantic answer equivalence decided by a judge model.

use thiserror::Error;

use crate::backend::{BackendError, GenRequest, Sampler};
use crate::prompt::{PromptError, TemplateKind, TemplateSet};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge verdict is neither yes nor no: {0:?}")]
    JudgeUnparsable(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Reads a yes/no verdict from the first word of the reply.
pub fn parse_verdict(reply: &str) -> Result<bool, JudgeError> {
    let first = reply
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())
        .unwrap_or("")
        .to_ascii_lowercase();
    match first.as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(JudgeError::JudgeUnparsable(reply.chars().take(200).collect())),
    }
}

/// Asks the judge whether `prediction` means the same as `reference`.
pub fn llm_equivalence(
    question: &str,
    prediction: &str,
    reference: &str,
    templates: &TemplateSet,
    temperature: f64,
    judge: &Sampler,
) -> Result<bool, JudgeError> {
    let vars: std::collections::BTreeMap<&str, String> = [
        ("question", question.trim().to_string()),
        ("prediction", prediction.trim().to_string()),
        ("reference", reference.trim().to_string()),
        ("table", String::new()),
        ("texts", String::new()),
        ("trace", String::new()),
    ]
    .into_iter()
    .collect();
    let prompt = templates.get(TemplateKind::EquivalenceJudge).render(&vars)?;
    let reply = judge.sample(&GenRequest::new(prompt, temperature, 1))?;
    parse_verdict(&reply[0].text)
}
