//! Aggregate statistics over a set of runs.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Intent;
use crate::orchestrator::RunResult;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("no results to aggregate")]
    EmptyResults,
    #[error("baseline has no iterations")]
    EmptyBaseline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub instances: usize,
    #[serde(with = "ratio_str")]
    pub em: Ratio<u64>,
    pub intent_histogram: BTreeMap<Intent, u64>,
    pub iteration_histogram: BTreeMap<usize, u64>,
    #[serde(with = "opt_ratio_str")]
    pub iteration_ratio: Option<Ratio<u64>>,
    pub call_total: u64,
}

mod ratio_str {
    use num_rational::Ratio;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
    }

    pub fn parse(text: &str) -> Option<Ratio<u64>> {
        let (n, d) = text.split_once('/')?;
        let n: u64 = n.trim().parse().ok()?;
        let d: u64 = d.trim().parse().ok()?;
        (d != 0).then(|| Ratio::new(n, d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<u64>, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).ok_or_else(|| serde::de::Error::custom(format!("bad ratio {text:?}")))
    }
}

mod opt_ratio_str {
    use num_rational::Ratio;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Option<Ratio<u64>>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => super::ratio_str::serialize(r, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Ratio<u64>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|t| super::ratio_str::parse(&t).ok_or_else(|| serde::de::Error::custom(format!("bad ratio {t:?}"))))
            .transpose()
    }
}

fn as_f64(r: &Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl StatsReport {
    /// JSON object with ratios as `"n/d"` strings and their decimal values.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["em_value"] = as_f64(&self.em).into();
        v["iteration_ratio_value"] = self.iteration_ratio.as_ref().map(as_f64).into();
        v
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "instances        {}", self.instances)?;
        writeln!(f, "exact match      {:.4} ({})", as_f64(&self.em), self.em)?;
        match &self.iteration_ratio {
            Some(r) => writeln!(f, "iteration ratio  {:.4} ({r})", as_f64(r))?,
            None => writeln!(f, "iteration ratio  -")?,
        }
        writeln!(f, "llm calls        {}", self.call_total)?;
        writeln!(f, "intents:")?;
        for (intent, n) in &self.intent_histogram {
            writeln!(f, "  {:<12} {n}", intent.name())?;
        }
        writeln!(f, "iterations:")?;
        for (it, n) in &self.iteration_histogram {
            writeln!(f, "  {it:<12} {n}")?;
        }
        Ok(())
    }
}

/// Aggregates `(result, em)` pairs. With baseline iteration counts the ratio
/// of total iterations against the baseline is included.
pub fn aggregate_stats(
    results: &[(RunResult, bool)],
    baseline_iterations: Option<&[usize]>,
) -> Result<StatsReport, StatsError> {
    if results.is_empty() {
        return Err(StatsError::EmptyResults);
    }
    let mut intent_histogram = BTreeMap::new();
    let mut iteration_histogram = BTreeMap::new();
    for (r, _) in results {
        for step in &r.trace.steps {
            *intent_histogram.entry(step.selected_action.intent).or_insert(0) += 1;
        }
        if let Some(a) = &r.unexecuted_action {
            *intent_histogram.entry(a.intent).or_insert(0) += 1;
        }
        *iteration_histogram.entry(r.iterations).or_insert(0) += 1;
    }
    let correct = results.iter().filter(|(_, em)| *em).count() as u64;
    let iteration_ratio = match baseline_iterations {
        Some(base) => {
            let denom: u64 = base.iter().map(|&i| i as u64).sum();
            if denom == 0 {
                return Err(StatsError::EmptyBaseline);
            }
            let numer: u64 = results.iter().map(|(r, _)| r.iterations as u64).sum();
            Some(Ratio::new(numer, denom))
        }
        None => None,
    };
    Ok(StatsReport {
        instances: results.len(),
        em: Ratio::new(correct, results.len() as u64),
        intent_histogram,
        iteration_histogram,
        iteration_ratio,
        call_total: results.iter().map(|(r, _)| r.llm_calls).sum(),
    })
}
