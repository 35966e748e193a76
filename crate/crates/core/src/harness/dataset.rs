//! Loading datasets: the fixture JSONL format plus converters for the public
//! WTQ, TAT-QA and SciTab release files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::fusion::canonicalize_value;
use crate::table::{FixtureRecord, Table, TqaInstance};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {message}")]
    UnreadableFile { path: PathBuf, message: String },
    #[error("{0} holds no usable instance")]
    EmptyDataset(PathBuf),
    #[error("unknown dataset format {0:?} (expected fixture, wtq, tat or scitab)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// One fixture record per line. CRT-style data is expected in this form.
    Fixture,
    /// WikiTableQuestions TSV (`id`, `utterance`, `context`, `targetValue`).
    Wtq,
    /// TAT-QA JSON: a list of table documents with paragraphs and questions.
    Tat,
    /// SciTab JSON: claims over tables, cast to verification questions.
    Scitab,
}

impl FromStr for DatasetFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixture" | "jsonl" | "crt" => Ok(DatasetFormat::Fixture),
            "wtq" => Ok(DatasetFormat::Wtq),
            "tat" | "tatqa" | "tat-qa" => Ok(DatasetFormat::Tat),
            "scitab" => Ok(DatasetFormat::Scitab),
            other => Err(DatasetError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::Fixture => "fixture",
            DatasetFormat::Wtq => "wtq",
            DatasetFormat::Tat => "tat",
            DatasetFormat::Scitab => "scitab",
        })
    }
}

/// A record that was not loaded, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    /// Line number (1-based) or record position.
    pub position: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadReport {
    pub instances: Vec<TqaInstance>,
    pub skipped: Vec<Skipped>,
}

impl LoadReport {
    fn skip(&mut self, position: usize, reason: impl Into<String>) {
        let reason = reason.into();
        warn!("skipping record {position}: {reason}");
        self.skipped.push(Skipped { position, reason });
    }

    fn push(&mut self, position: usize, instance: TqaInstance) {
        match instance.validate() {
            Ok(()) => self.instances.push(instance),
            Err(e) => self.skip(position, e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|e| DatasetError::UnreadableFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads instances; malformed records are skipped and listed in the report.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<LoadReport, DatasetError> {
    let text = read(path)?;
    let report = match format {
        DatasetFormat::Fixture => load_fixture(&text),
        DatasetFormat::Wtq => load_wtq(&text, path),
        DatasetFormat::Tat => load_tat(&text, path)?,
        DatasetFormat::Scitab => load_scitab(&text, path)?,
    };
    if report.instances.is_empty() {
        return Err(DatasetError::EmptyDataset(path.to_path_buf()));
    }
    Ok(report)
}

pub fn load_fixture(text: &str) -> LoadReport {
    let mut report = LoadReport::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<FixtureRecord>(line) {
            Ok(rec) => match TqaInstance::try_from(rec) {
                Ok(inst) => report.instances.push(inst),
                Err(e) => report.skip(i + 1, e.to_string()),
            },
            Err(e) => report.skip(i + 1, format!("not a fixture record: {e}")),
        }
    }
    report
}

/// Writes instances in the fixture format.
pub fn write_fixture(instances: &[TqaInstance], mut out: impl std::io::Write) -> std::io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut out, &FixtureRecord::from(inst))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads a CSV table file whose first row is the header.
fn read_csv_table(path: &Path) -> Result<Table, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows.push(rec.iter().map(|c| c.trim().to_string()).collect::<Vec<_>>());
    }
    if rows.is_empty() {
        return Err("empty table file".into());
    }
    let header = rows.remove(0);
    Ok(Table { header, rows })
}

/// WTQ escapes `|`, newlines and backslashes inside target values.
fn unescape_wtq(s: &str) -> String {
    let mut out = String::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('p') => out.push('|'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

fn load_wtq(text: &str, path: &Path) -> LoadReport {
    let mut report = LoadReport::default();
    let dir = path.parent().unwrap_or(Path::new("."));
    // Release layout: data/*.tsv next to csv/; contexts are relative to the root.
    let roots = [dir.parent().unwrap_or(dir), dir];
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.split('\t').collect(),
        None => return report,
    };
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (Some(id_c), Some(q_c), Some(ctx_c), Some(gold_c)) =
        (col("id"), col("utterance"), col("context"), col("targetValue"))
    else {
        report.skip(1, "header lacks id/utterance/context/targetValue");
        return report;
    };
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let get = |c: usize| fields.get(c).copied().unwrap_or("");
        let context = get(ctx_c);
        let Some(table_path) = roots.iter().map(|r| r.join(context)).find(|p| p.is_file()) else {
            report.skip(i + 1, format!("table file {context:?} not found"));
            continue;
        };
        let table = match read_csv_table(&table_path) {
            Ok(t) => t,
            Err(e) => {
                report.skip(i + 1, format!("{}: {e}", table_path.display()));
                continue;
            }
        };
        let gold: Vec<String> = get(gold_c).split('|').map(unescape_wtq).collect();
        report.push(
            i + 1,
            TqaInstance {
                id: get(id_c).to_string(),
                table,
                question: unescape_wtq(get(q_c)),
                texts: None,
                gold: Some(vec![gold.join("|")]),
            },
        );
    }
    report
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.trim().to_string(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn parse_json_list(text: &str, path: &Path) -> Result<Vec<Value>, DatasetError> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Array(items)) => Ok(items),
        Ok(_) => Err(DatasetError::UnreadableFile {
            path: path.to_path_buf(),
            message: "expected a JSON array".into(),
        }),
        // Some releases ship one JSON object per line.
        Err(_) => Ok(text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).unwrap_or(Value::Null))
            .collect()),
    }
}

fn table_from_grid(grid: &Value) -> Result<Table, String> {
    let rows: Vec<Vec<String>> = grid
        .as_array()
        .ok_or("table is not a list of rows")?
        .iter()
        .map(|r| {
            r.as_array()
                .map(|cells| cells.iter().map(cell).collect())
                .ok_or("row is not a list")
        })
        .collect::<Result<_, _>>()?;
    let mut rows = rows.into_iter();
    let header = rows.next().ok_or("table has no rows")?;
    Ok(Table {
        header,
        rows: rows.collect(),
    })
}

fn tat_answer(answer: &Value) -> Option<String> {
    match answer {
        Value::Array(parts) if !parts.is_empty() => Some(parts.iter().map(cell).collect::<Vec<_>>().join("|")),
        Value::Number(_) => Some(canonicalize_value(&answer.to_string())),
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        _ => None,
    }
}

fn load_tat(text: &str, path: &Path) -> Result<LoadReport, DatasetError> {
    let mut report = LoadReport::default();
    for (pos, doc) in parse_json_list(text, path)?.iter().enumerate() {
        let table = match table_from_grid(&doc["table"]["table"]) {
            Ok(t) => t,
            Err(e) => {
                report.skip(pos + 1, e);
                continue;
            }
        };
        let mut paragraphs: Vec<&Value> = doc["paragraphs"]
            .as_array()
            .map(|p| p.iter().collect())
            .unwrap_or_default();
        paragraphs.sort_by_key(|p| p["order"].as_i64().unwrap_or(0));
        let texts: Vec<String> = paragraphs
            .iter()
            .map(|p| cell(&p["text"]))
            .filter(|t| !t.is_empty())
            .collect();
        for (qi, q) in doc["questions"]
            .as_array()
            .map(Vec::as_slice)
            .unwrap_or(&[])
            .iter()
            .enumerate()
        {
            let id = q["uid"]
                .as_str()
                .map(String::from)
                .unwrap_or_else(|| format!("tat-{pos}-{qi}"));
            let Some(gold) = tat_answer(&q["answer"]) else {
                report.skip(pos + 1, format!("question {id} has no answer"));
                continue;
            };
            report.push(
                pos + 1,
                TqaInstance {
                    id,
                    table: table.clone(),
                    question: cell(&q["question"]),
                    texts: (!texts.is_empty()).then(|| texts.clone()),
                    gold: Some(vec![gold]),
                },
            );
        }
    }
    Ok(report)
}

/// Verification question for a SciTab claim; answers are the three labels.
pub fn scitab_question(claim: &str) -> String {
    format!(
        "Is the following claim supported or refuted by the table, or is there not enough info? \
         Answer with supports, refutes, or not enough info. Claim: {}",
        claim.trim()
    )
}

fn load_scitab(text: &str, path: &Path) -> Result<LoadReport, DatasetError> {
    let mut report = LoadReport::default();
    for (pos, rec) in parse_json_list(text, path)?.iter().enumerate() {
        let header: Vec<String> = rec["table_column_names"]
            .as_array()
            .map(|h| h.iter().map(cell).collect())
            .unwrap_or_default();
        let rows: Vec<Vec<String>> = rec["table_content_values"]
            .as_array()
            .map(|rows| {
                rows.iter()
                    .map(|r| r.as_array().map(|c| c.iter().map(cell).collect()).unwrap_or_default())
                    .collect()
            })
            .unwrap_or_default();
        let claim = cell(&rec["claim"]);
        let label = cell(&rec["label"]);
        if claim.is_empty() || label.is_empty() {
            report.skip(pos + 1, "record lacks claim or label");
            continue;
        }
        let caption = cell(&rec["table_caption"]);
        report.push(
            pos + 1,
            TqaInstance {
                id: rec["id"]
                    .as_str()
                    .map(String::from)
                    .unwrap_or_else(|| format!("scitab-{pos}")),
                table: Table { header, rows },
                question: scitab_question(&claim),
                texts: (!caption.is_empty()).then(|| vec![caption]),
                gold: Some(vec![label.to_lowercase()]),
            },
        );
    }
    Ok(report)
}
