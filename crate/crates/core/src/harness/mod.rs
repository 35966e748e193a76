//! Datasets, scoring and the answer-equivalence judge.

mod dataset;
mod em;
mod judge;

pub use dataset::{
    load_dataset, load_fixture, scitab_question, write_fixture, DatasetError, DatasetFormat, LoadReport, Skipped,
};
pub use em::{exact_match, normalize_answer};
pub use judge::{llm_equivalence, parse_verdict, JudgeError};
