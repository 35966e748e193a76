//! Running a whole dataset with a bounded number of worker threads.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::events::TraceLog;
use crate::harness::exact_match;
use crate::orchestrator::{run_instance_logged, RunDeps, RunError, RunResult};
use crate::stats::{aggregate_stats, StatsError, StatsReport};
use crate::table::TqaInstance;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const TRACES_DIR: &str = "traces";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("baseline mismatch: {0}")]
    Baseline(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub result: RunResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Vec<String>>,
    pub em: bool,
}

impl RunRecord {
    pub fn new(result: RunResult, gold: Option<Vec<String>>) -> Self {
        let em = match (&result.answer, &gold) {
            (Some(a), Some(g)) => exact_match(a, g),
            _ => false,
        };
        Self { result, gold, em }
    }
}

/// File name for an instance trace; ids are sanitized for the file system.
pub fn trace_file_name(instance_id: &str) -> String {
    let safe: String = instance_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.jsonl")
}

/// Runs every instance, at most `workers` at a time. Records come back in
/// dataset order. With `out` set, records go to `results.jsonl` and each
/// run's event log to `traces/<id>.jsonl` as runs finish.
///
/// A configuration error stops the remaining work and is returned.
pub fn run_dataset(
    instances: &[TqaInstance],
    config: &RunConfig,
    deps: &RunDeps,
    workers: usize,
    out: Option<&Path>,
) -> Result<Vec<RunRecord>, RunnerError> {
    let sink = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir.join(TRACES_DIR)).map_err(io_err(dir))?;
            let path = dir.join(RESULTS_FILE);
            Some(Mutex::new(BufWriter::new(File::create(&path).map_err(io_err(&path))?)))
        }
        None => None,
    };
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunRecord, RunnerError>>>> =
        instances.iter().map(|_| Mutex::new(None)).collect();
    let failed = std::sync::atomic::AtomicBool::new(false);

    let work = || loop {
        if failed.load(Ordering::SeqCst) {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(instance) = instances.get(i) else { break };
        let log = TraceLog::new();
        let outcome = run_instance_logged(instance, config, deps, &log)
            .map_err(RunnerError::from)
            .and_then(|result| {
                let record = RunRecord::new(result, instance.gold.clone());
                if let (Some(dir), Some(sink)) = (out, &sink) {
                    let trace_path = dir.join(TRACES_DIR).join(trace_file_name(&instance.id));
                    File::create(&trace_path)
                        .and_then(|f| log.write_jsonl(BufWriter::new(f)))
                        .map_err(io_err(&trace_path))?;
                    let line = serde_json::to_string(&record).expect("records serialize");
                    let mut w = sink.lock().unwrap();
                    writeln!(w, "{line}").and_then(|_| w.flush()).map_err(io_err(dir))?;
                }
                Ok(record)
            });
        if outcome.is_err() {
            failed.store(true, Ordering::SeqCst);
        }
        *slots[i].lock().unwrap() = Some(outcome);
    };
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, instances.len().max(1)) {
            s.spawn(work);
        }
    });

    let mut records = Vec::with_capacity(instances.len());
    for slot in slots {
        match slot.into_inner().unwrap() {
            Some(Ok(r)) => records.push(r),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    Ok(records)
}

/// Reads the records of a run directory (or a `results.jsonl` file).
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, RunnerError> {
    let file_path = if path.is_dir() {
        path.join(RESULTS_FILE)
    } else {
        path.to_path_buf()
    };
    let file = File::open(&file_path).map_err(io_err(&file_path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&file_path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| RunnerError::BadRecord {
            path: file_path.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

/// Statistics of a run, with the iteration ratio against `baseline` if given.
/// Baseline iterations are matched by instance id.
pub fn stats_for(records: &[RunRecord], baseline: Option<&[RunRecord]>) -> Result<StatsReport, RunnerError> {
    let pairs: Vec<(RunResult, bool)> = records.iter().map(|r| (r.result.clone(), r.em)).collect();
    let base_iters: Option<Vec<usize>> = baseline.map(|base| {
        records
            .iter()
            .filter_map(|r| {
                base.iter()
                    .find(|b| b.result.instance_id == r.result.instance_id)
                    .map(|b| b.result.iterations)
            })
            .collect()
    });
    if let Some(b) = &base_iters {
        if b.len() != records.len() {
            return Err(RunnerError::Baseline(format!(
                "baseline covers {} of {} instances",
                b.len(),
                records.len()
            )));
        }
    }
    Ok(aggregate_stats(&pairs, base_iters.as_deref())?)
}
