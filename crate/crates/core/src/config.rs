//! Run parameters and the on-disk configuration file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ChatBackendConfig;
use crate::prompt::{PromptError, TemplateSet};
use crate::selection::SelectionStrategy;
use crate::tools::{SandboxPolicy, WikiConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Components that can be switched off to measure their contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    NoSearch,
    #[serde(alias = "no-calc")]
    NoCalculator,
    #[serde(alias = "no-coder")]
    NoCodingAgent,
}

impl FromStr for Ablation {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "no-search" => Ok(Ablation::NoSearch),
            "no-calc" | "no-calculator" => Ok(Ablation::NoCalculator),
            "no-coder" | "no-coding-agent" => Ok(Ablation::NoCodingAgent),
            other => Err(ConfigError::Invalid(format!("unknown ablation {other:?}"))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::NoSearch => "no-search",
            Ablation::NoCalculator => "no-calc",
            Ablation::NoCodingAgent => "no-coder",
        })
    }
}

pub type AblationSet = BTreeSet<Ablation>;

/// Parses a comma-separated ablation list such as `no-search,no-calc`.
pub fn parse_ablations(list: &str) -> Result<AblationSet, ConfigError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Everything that shapes one instance run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Samples per planner, coder and query batch.
    pub k: usize,
    /// Maximum number of iterations.
    pub max_iterations: usize,
    /// Shortcut threshold as a fraction of `k`.
    pub alpha: f64,
    pub tau_p: f64,
    pub tau_c: f64,
    /// Temperature for judge prompts (selection and answer equivalence).
    pub tau_judge: f64,
    pub selection: SelectionStrategy,
    pub ablation: AblationSet,
    /// Whether a confident rollout vote may answer without iterating.
    pub shortcut: bool,
    pub sandbox: SandboxPolicy,
    #[serde(skip)]
    pub templates: TemplateSet,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 5,
            max_iterations: 7,
            alpha: 1.0,
            tau_p: 0.6,
            tau_c: 0.6,
            tau_judge: 0.0,
            selection: SelectionStrategy::Sc,
            ablation: AblationSet::new(),
            shortcut: true,
            sandbox: SandboxPolicy::default(),
            templates: TemplateSet::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.k == 0 {
            return invalid("k must be positive");
        }
        if self.max_iterations == 0 {
            return invalid("max_iterations must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid("alpha must lie in [0, 1]");
        }
        for (name, t) in [
            ("tau_p", self.tau_p),
            ("tau_c", self.tau_c),
            ("tau_judge", self.tau_judge),
        ] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be a non-negative number")));
            }
        }
        self.sandbox.validate().map_err(ConfigError::Invalid)?;
        self.templates.validate()?;
        Ok(())
    }

    pub fn ablated(&self, a: Ablation) -> bool {
        self.ablation.contains(&a)
    }

    /// Smallest and largest call counts of an SC run under this configuration:
    /// one batch for a shortcut, and at most two batches per executed
    /// iteration plus the final planner batch.
    pub fn call_bounds(&self) -> (u64, u64) {
        let k = self.k as u64;
        let i = self.max_iterations as u64;
        (k, i.saturating_sub(1) * 2 * k + k)
    }
}

/// How to reach a text-generation backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Chat(ChatBackendConfig),
    Replay { script: PathBuf },
}

/// Contents of the TOML configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub run: RunConfig,
    /// The backend named `default`.
    pub backend: Option<BackendSpec>,
    /// Further named backends.
    pub backends: BTreeMap<String, BackendSpec>,
    /// Backend names per role; `default` when unset.
    pub planner_backend: Option<String>,
    pub coder_backend: Option<String>,
    pub judge_backend: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    /// Selects `<templates_dir>/<dataset_name>/` prompt overrides.
    pub dataset_name: Option<String>,
    pub search: WikiConfig,
    pub sandbox: Option<SandboxPolicy>,
}

impl AppConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg: AppConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        if let Some(sandbox) = cfg.sandbox.take() {
            cfg.run.sandbox = sandbox;
        }
        Ok(cfg)
    }

    /// Reads a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.cache_dir.as_mut().map(resolve);
        cfg.templates_dir.as_mut().map(resolve);
        cfg.search.cache_dir.as_mut().map(resolve);
        for spec in cfg.backend.iter_mut().chain(cfg.backends.values_mut()) {
            if let BackendSpec::Replay { script } = spec {
                resolve(script);
            }
        }
        cfg.load_templates()?;
        Ok(cfg)
    }

    pub fn load_templates(&mut self) -> Result<(), ConfigError> {
        if let Some(dir) = &self.templates_dir {
            self.run.templates = TemplateSet::load(dir, self.dataset_name.as_deref())?;
        }
        Ok(())
    }

    /// Looks up a backend by name; `default` refers to the `[backend]` table.
    pub fn backend_spec(&self, name: &str) -> Result<&BackendSpec, ConfigError> {
        let found = if name == "default" {
            self.backend.as_ref().or_else(|| self.backends.get(name))
        } else {
            self.backends.get(name)
        };
        found.ok_or_else(|| ConfigError::Invalid(format!("no backend named {name:?}")))
    }
}
