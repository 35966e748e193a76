use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use mact_core::backend::{Backend, ChatBackend, RecordingBackend, ReplayBackend, ResponseCache};
use mact_core::config::{parse_ablations, BackendSpec};
use mact_core::harness::{load_dataset, write_fixture, DatasetFormat, LoadReport};
use mact_core::runner::{read_records, run_dataset, stats_for, RunRecord};
use mact_core::stats::StatsReport;
use mact_core::tools::{KnowledgeSearch, StaticSearch, WikiClient};
use mact_core::{Ablation, AppConfig, RunConfig, RunDeps, SelectionStrategy};

const REPORT_FILE: &str = "report.json";

#[derive(Parser)]
#[command(name = "mact", version, about = "Multi-agent table question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a dataset and write results, traces and a report.
    Run(RunArgs),
    /// Aggregate statistics over finished runs.
    Stats(StatsArgs),
    /// Run instances against a replay script and print each result.
    Replay(ReplayArgs),
    /// Convert a public dataset release into fixture JSONL.
    Import(ImportArgs),
}

/// Flags that override the `[run]` section of the config file.
#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    selection: Option<SelectionStrategy>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Comma-separated: no-search, no-calc, no-coder.
    #[arg(long)]
    ablate: Option<String>,
    /// Disable the rollout shortcut (baseline runs for the iteration ratio).
    #[arg(long)]
    no_shortcut: bool,
    /// JSON map from entity to paragraph, used instead of live search.
    #[arg(long)]
    search_fixture: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "fixture")]
    dataset_format: DatasetFormat,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Planner backend name from the config; `default` is the `[backend]` table.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Directory receiving a replay script per backend.
    #[arg(long)]
    record: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(clap::Args)]
struct StatsArgs {
    #[arg(long)]
    runs: PathBuf,
    /// Runs of the same instances without the shortcut.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ReplayArgs {
    /// Planner script. Files next to it (instance.jsonl, run.toml,
    /// coder.jsonl, judge.jsonl, search.json) are used when present.
    #[arg(long)]
    script: PathBuf,
    #[arg(long)]
    coder_script: Option<PathBuf>,
    #[arg(long)]
    judge_script: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "fixture")]
    dataset_format: DatasetFormat,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(clap::Args)]
struct ImportArgs {
    #[arg(long)]
    format: DatasetFormat,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Stats(args) => stats(args),
        Command::Replay(args) => replay(args),
        Command::Import(args) => import(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

impl Overrides {
    fn apply(&self, run: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.selection {
            run.selection = s;
        }
        if let Some(a) = self.alpha {
            run.alpha = a;
        }
        if let Some(k) = self.k {
            run.k = k;
        }
        if let Some(i) = self.max_iter {
            run.max_iterations = i;
        }
        if let Some(list) = &self.ablate {
            run.ablation = parse_ablations(list)?;
        }
        if self.no_shortcut {
            run.shortcut = false;
        }
        run.validate()?;
        Ok(())
    }

    fn search(&self, app: &AppConfig) -> Result<Option<Arc<dyn KnowledgeSearch>>> {
        if let Some(path) = &self.search_fixture {
            let s = StaticSearch::from_json_file(path).with_context(|| format!("reading {}", path.display()))?;
            return Ok(Some(Arc::new(s)));
        }
        if app.run.ablated(Ablation::NoSearch) {
            return Ok(None);
        }
        Ok(Some(Arc::new(WikiClient::new(app.search.clone()))))
    }
}

fn load_instances(path: &Path, format: DatasetFormat) -> Result<LoadReport> {
    let report = load_dataset(path, format)?;
    for s in &report.skipped {
        log::warn!("{}: skipped record {}: {}", path.display(), s.position, s.reason);
    }
    info!(
        "{} instances loaded, {} skipped",
        report.instances.len(),
        report.skipped.len()
    );
    Ok(report)
}

fn build_backend(app: &AppConfig, name: &str, record: Option<&Path>) -> Result<Arc<dyn Backend>> {
    let backend: Arc<dyn Backend> = match app.backend_spec(name)? {
        BackendSpec::Chat(cfg) => Arc::new(ChatBackend::new(cfg.clone())),
        BackendSpec::Replay { script } => Arc::new(
            ReplayBackend::from_jsonl(script).with_context(|| format!("reading replay script {}", script.display()))?,
        ),
    };
    Ok(match record {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{name}.jsonl"));
            Arc::new(RecordingBackend::create(backend, &path).with_context(|| format!("creating {}", path.display()))?)
        }
        None => backend,
    })
}

fn run(args: RunArgs) -> Result<()> {
    let mut app = match &args.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    args.overrides.apply(&mut app.run)?;
    let dataset = load_instances(&args.dataset, args.dataset_format)?;

    let planner_name = args
        .backend
        .clone()
        .or_else(|| app.planner_backend.clone())
        .unwrap_or_else(|| "default".into());
    let coder_name = app.coder_backend.clone().unwrap_or_else(|| planner_name.clone());
    let judge_name = app.judge_backend.clone().unwrap_or_else(|| planner_name.clone());
    // One instance per name, so roles sharing a backend share its script.
    let mut built: BTreeMap<String, Arc<dyn Backend>> = BTreeMap::new();
    for name in [&planner_name, &coder_name, &judge_name] {
        if !built.contains_key(name) {
            built.insert(name.clone(), build_backend(&app, name, args.record.as_deref())?);
        }
    }
    let deps = RunDeps {
        planner: built[&planner_name].clone(),
        coder: built[&coder_name].clone(),
        judge: built[&judge_name].clone(),
        search: args.overrides.search(&app)?,
        cache: match &app.cache_dir {
            Some(dir) => Some(Arc::new(
                ResponseCache::open(dir).with_context(|| format!("opening cache {}", dir.display()))?,
            )),
            None => None,
        },
    };

    let records = run_dataset(&dataset.instances, &app.run, &deps, args.workers, Some(&args.out))?;
    let report = stats_for(&records, None)?;
    write_report(&report, &args.out.join(REPORT_FILE))?;
    print!("{report}");
    Ok(())
}

fn write_report(report: &StatsReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&report.to_json())?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn stats(args: StatsArgs) -> Result<()> {
    let records = read_records(&args.runs)?;
    let baseline: Option<Vec<RunRecord>> = args.baseline.as_deref().map(read_records).transpose()?;
    let report = stats_for(&records, baseline.as_deref())?;
    if let Some(path) = &args.report {
        write_report(&report, path)?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report.to_json())?);
    } else {
        print!("{report}");
    }
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<()> {
    let dir = args.script.parent().unwrap_or(Path::new(".")).to_path_buf();
    let beside = |name: &str| Some(dir.join(name)).filter(|p| p.exists());

    let mut app = match (&args.config, beside("run.toml")) {
        (Some(path), _) => AppConfig::load(path)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            AppConfig {
                run: toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
                ..Default::default()
            }
        }
        (None, None) => AppConfig::default(),
    };
    let mut overrides = args.overrides;
    overrides.search_fixture = overrides.search_fixture.or_else(|| beside("search.json"));
    overrides.apply(&mut app.run)?;

    let Some(dataset) = args.dataset.clone().or_else(|| beside("instance.jsonl")) else {
        bail!(
            "no --dataset given and no instance.jsonl next to {}",
            args.script.display()
        );
    };
    let dataset = load_instances(&dataset, args.dataset_format)?;

    let script = |path: Option<PathBuf>, name: &str| -> Result<Arc<dyn Backend>> {
        Ok(Arc::new(match path {
            Some(p) => ReplayBackend::from_jsonl(&p).with_context(|| format!("reading {}", p.display()))?,
            None => ReplayBackend::new(name, []),
        }))
    };
    let deps = RunDeps {
        planner: script(Some(args.script.clone()), "planner")?,
        coder: script(args.coder_script.clone().or_else(|| beside("coder.jsonl")), "coder")?,
        judge: script(args.judge_script.clone().or_else(|| beside("judge.jsonl")), "judge")?,
        search: match &overrides.search_fixture {
            Some(_) => overrides.search(&app)?,
            None => None,
        },
        cache: None,
    };
    let records = run_dataset(&dataset.instances, &app.run, &deps, 1, args.out.as_deref())?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for r in &records {
        writeln!(out, "{}", serde_json::to_string(&r.result)?)?;
    }
    out.flush()?;
    Ok(())
}

fn import(args: ImportArgs) -> Result<()> {
    let report = load_instances(&args.input, args.format)?;
    if report.instances.is_empty() {
        bail!("{} yielded no instances", args.input.display());
    }
    let file = File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let mut w = BufWriter::new(file);
    write_fixture(&report.instances, &mut w)?;
    w.flush()?;
    println!(
        "{} instances written to {}, {} skipped",
        report.instances.len(),
        args.output.display(),
        report.skipped.len()
    );
    Ok(())
}
