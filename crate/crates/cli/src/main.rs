use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lifebench::agent::{run_agent, run_on_instance, AgentConfig, AgentRun, OraclePlanner};
use lifebench::baselines::{run_batch, run_cp, run_dp, CpConfig, DpConfig, OracleResponder};
use lifebench::benchgen::{generate_benchmark, load_benchmark, mix_summary, to_jsonl, verify_all, GenConfig, QAInstance};
use lifebench::evalkit::{aggregate_report, read_predictions, score_all, write_predictions, Prediction};
use lifebench::lifelog::csvio::{export_csv, load_csv, MANIFEST_FILE};
use lifebench::lifelog::synth::{synthesize_dataset, SynthSpec};
use lifebench::lifelog::AlignedDataset;
use lifebench::llm::{BackendConfig, ChatBackend, Recorder, ScriptedBackend};
use lifebench::qlang::AnswerType;
use lifebench::store::RelationalStore;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "lifebench", version, about = "Lifelog QA benchmark: synthesis, generation, verification and evaluation")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a cohort and write it as a CSV bundle.
    Synth {
        #[arg(long, default_value_t = 20)]
        users: usize,
        #[arg(long, default_value_t = 28)]
        days: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output directory for the CSV bundle.
        #[arg(long)]
        out: PathBuf,
        /// Also build a database file.
        #[arg(long)]
        db: Option<PathBuf>,
    },
    /// Load a CSV bundle into a database file.
    Ingest {
        /// Bundle directory.
        #[arg(long)]
        data: PathBuf,
        /// Manifest path (default: <data>/manifest.toml).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        db: PathBuf,
        /// Replace an existing database file.
        #[arg(long)]
        force: bool,
    },
    /// Generate a verified benchmark from a database.
    Generate {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        total: usize,
        /// Exact single-user count (default: the standard split).
        #[arg(long)]
        single: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        max_retries: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run dual execution over a benchmark file.
    Validate {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        bench: PathBuf,
    },
    /// Evaluate a backend on a benchmark.
    Eval {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        /// Report JSON path; predictions and facets are written next to it.
        #[arg(long)]
        report: PathBuf,
        /// Evaluate only the first N instances.
        #[arg(long)]
        limit: Option<usize>,
        /// CP record budget in estimated tokens.
        #[arg(long, default_value_t = lifebench::baselines::DEFAULT_TOKEN_BUDGET)]
        token_budget: usize,
        /// Agent step budget.
        #[arg(long, default_value_t = lifebench::agent::DEFAULT_BUDGET)]
        budget: usize,
    },
    /// Ask the agent one question.
    Agent {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        query: String,
        #[command(flatten)]
        backend: BackendArgs,
        /// Benchmark file, required by the oracle backend.
        #[arg(long)]
        bench: Option<PathBuf>,
        #[arg(long, value_enum)]
        answer_type: Option<AnswerTypeArg>,
        #[arg(long, default_value_t = lifebench::agent::DEFAULT_BUDGET)]
        budget: usize,
        /// Write the step trace as JSON Lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Re-score prediction logs.
    Report {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Cp,
    Dp,
    Agent,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BackendChoice {
    /// OpenAI-compatible chat-completion endpoint.
    Remote,
    /// Replay file keyed by transcript hash.
    Scripted,
    /// Scripted responder that knows every answer.
    Oracle,
    /// Scripted responder that gets multi-day statistics and long lists wrong.
    Weak,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnswerTypeArg {
    YesNo,
    Number,
    Text,
    Pair,
    ListOf,
}

impl From<AnswerTypeArg> for AnswerType {
    fn from(a: AnswerTypeArg) -> Self {
        match a {
            AnswerTypeArg::YesNo => AnswerType::YesNo,
            AnswerTypeArg::Number => AnswerType::Number,
            AnswerTypeArg::Text => AnswerType::Text,
            AnswerTypeArg::Pair => AnswerType::Pair,
            AnswerTypeArg::ListOf => AnswerType::ListOf,
        }
    }
}

#[derive(clap::Args, Serialize)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: BackendChoice,
    /// Replay file for --backend scripted.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Write a replay file of every successful exchange.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, env = "LIFEBENCH_BASE_URL")]
    base_url: Option<String>,
    #[arg(long, env = "LIFEBENCH_MODEL")]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "LIFEBENCH_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1024)]
    max_tokens: u32,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
}

/// A flag problem found after parsing; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
    seeds: BTreeMap<String, u64>,
    versions: BTreeMap<String, String>,
    started_at: String,
    finished_at: String,
}

struct Run {
    subcommand: &'static str,
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
    seeds: BTreeMap<String, u64>,
    started_at: String,
}

impl Run {
    fn new(subcommand: &'static str, config: serde_json::Value) -> Self {
        Self {
            subcommand,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
            started_at: chrono::Utc::now().to_rfc3339(),
        }
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    /// Writes the manifest to `path`.
    fn finish(self, path: &Path) -> Result<()> {
        let versions = BTreeMap::from([("lifebench".to_string(), env!("CARGO_PKG_VERSION").to_string())]);
        let m = RunManifest {
            subcommand: self.subcommand.into(),
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            seeds: self.seeds,
            versions,
            started_at: self.started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
        };
        fs::write(path, serde_json::to_string_pretty(&m)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// `bench.jsonl` -> `bench.jsonl.manifest.json`.
fn manifest_for(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// `report.json` -> `report.<suffix>`.
fn sibling(p: &Path, suffix: &str) -> PathBuf {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    p.with_file_name(format!("{stem}.{suffix}"))
}

fn open_store(db: &Path) -> Result<(RelationalStore, AlignedDataset)> {
    let store = RelationalStore::open(db).with_context(|| format!("opening {}", db.display()))?;
    let ds = store.load_dataset().context("loading dataset from the database")?;
    Ok((store, ds))
}

fn backend_config(a: &BackendArgs) -> Result<BackendConfig> {
    let mut c = match a.backend {
        BackendChoice::Remote => {
            let url = a.base_url.clone().ok_or_else(|| usage("--backend remote needs --base-url"))?;
            let model = a.model.clone().ok_or_else(|| usage("--backend remote needs --model"))?;
            BackendConfig::remote(url, model)
        }
        _ => BackendConfig::default(),
    };
    c.api_key_env = a.api_key_env.clone();
    c.temperature = a.temperature;
    c.max_tokens = a.max_tokens;
    c.timeout_secs = a.timeout_secs;
    c.max_retries = a.max_retries;
    c.max_in_flight = a.max_in_flight;
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

fn make_backend<'a>(
    a: &BackendArgs,
    mode: Mode,
    instances: &'a [QAInstance],
    ds: &'a AlignedDataset,
) -> Result<Box<dyn ChatBackend + 'a>> {
    Ok(match a.backend {
        BackendChoice::Remote => backend_config(a)?.build()?,
        BackendChoice::Scripted => {
            let path = a.replay.as_ref().ok_or_else(|| usage("--backend scripted needs --replay"))?;
            Box::new(ScriptedBackend::from_jsonl(path).with_context(|| format!("reading {}", path.display()))?)
        }
        BackendChoice::Oracle if mode == Mode::Agent => {
            let (planner, failed) = OraclePlanner::new(instances);
            for (id, e) in &failed {
                log::warn!("no scripted plan for {id}: {e}");
            }
            Box::new(planner)
        }
        BackendChoice::Oracle => Box::new(OracleResponder::exact(instances, ds)),
        BackendChoice::Weak if mode == Mode::Agent => {
            return Err(usage("--backend weak is available for --mode cp and --mode dp only"))
        }
        BackendChoice::Weak => Box::new(OracleResponder::weak(instances, ds)),
    })
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    instance_id: &'a str,
    run: &'a AgentRun,
}

fn cmd_synth(users: usize, days: usize, seed: u64, out: &Path, db: Option<&Path>) -> Result<()> {
    let mut run = Run::new("synth", json!({"users": users, "days": days}));
    run.seeds.insert("synth".into(), seed);
    let spec = SynthSpec::new(seed, users, days);
    let ds = synthesize_dataset(&spec).map_err(|e| usage(e.to_string()))?;
    export_csv(&ds, out)?;
    run.output(out);
    if let Some(db) = db {
        ensure_parent(db)?;
        RelationalStore::build_file(&ds, db).with_context(|| format!("building {}", db.display()))?;
        run.output(db);
    }
    println!(
        "wrote {} users x {} days ({} daily rows, {} events) to {}",
        ds.users().len(),
        days,
        ds.daily().len(),
        ds.events().len(),
        out.display()
    );
    run.finish(&out.join("run_manifest.json"))
}

fn cmd_ingest(data: &Path, manifest: Option<&Path>, db: &Path, force: bool) -> Result<()> {
    let manifest = manifest.map(Path::to_path_buf).unwrap_or_else(|| data.join(MANIFEST_FILE));
    let mut run = Run::new("ingest", json!({"force": force}));
    run.input(data);
    run.input(&manifest);
    let ds = load_csv(data, &manifest)?;
    ensure_parent(db)?;
    if force && db.exists() {
        fs::remove_file(db)?;
    }
    let store = RelationalStore::build_file(&ds, db).with_context(|| format!("building {}", db.display()))?;
    let counts = store.table_counts()?;
    println!("loaded {} into {}: {counts:?}", data.display(), db.display());
    run.output(db);
    run.finish(&manifest_for(db))
}

fn cmd_generate(db: &Path, total: usize, single: Option<usize>, seed: u64, max_retries: u32, out: &Path) -> Result<()> {
    let (store, ds) = open_store(db)?;
    let mut config = match single {
        Some(s) if s > total => return Err(usage(format!("--single {s} exceeds --total {total}"))),
        Some(s) => GenConfig::with_counts(seed, s, total - s),
        None => GenConfig::new(seed, total),
    };
    config.max_retries = max_retries;
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut run = Run::new("generate", serde_json::to_value(&config)?);
    run.seeds.insert("generate".into(), seed);
    run.input(db);
    let instances = generate_benchmark(&ds, &store, &config)?;
    ensure_parent(out)?;
    fs::write(out, to_jsonl(&instances)).with_context(|| format!("writing {}", out.display()))?;
    run.output(out);
    println!("wrote {} instances to {}", instances.len(), out.display());
    for (facet, counts) in mix_summary(&instances) {
        log::info!("{facet}: {counts:?}");
    }
    run.finish(&manifest_for(out))
}

fn cmd_validate(db: &Path, bench: &Path) -> Result<bool> {
    let (store, ds) = open_store(db)?;
    let instances = load_benchmark(bench)?;
    let results = verify_all(&instances, &ds, &store);
    let passed = results.iter().filter(|v| v.passed).count();
    for v in results.iter().filter(|v| !v.passed) {
        eprintln!("FAILED {}: {}", v.instance_id, v.detail.as_deref().unwrap_or(""));
    }
    println!("{passed}/{} verified", results.len());
    Ok(passed == results.len())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    mode: Mode,
    bench: &Path,
    db: &Path,
    backend: &BackendArgs,
    report_path: &Path,
    limit: Option<usize>,
    token_budget: usize,
    budget: usize,
    jobs: usize,
) -> Result<()> {
    let (store, ds) = open_store(db)?;
    let checksum = store.checksum()?;
    let mut instances = load_benchmark(bench)?;
    if let Some(n) = limit {
        instances.truncate(n);
    }
    if instances.is_empty() {
        bail!("no instances to evaluate");
    }
    let mut run = Run::new(
        "eval",
        json!({"mode": mode, "backend": backend, "limit": limit, "token_budget": token_budget, "budget": budget, "jobs": jobs}),
    );
    run.input(bench);
    run.input(db);
    let inner = make_backend(backend, mode, &instances, &ds)?;
    let recorder = Recorder::new(inner);
    let agent_cfg = AgentConfig {
        budget,
        ..AgentConfig::default()
    };
    let mut traces: Vec<(String, AgentRun)> = Vec::new();
    let preds: Vec<Prediction> = match mode {
        Mode::Cp => {
            let cfg = CpConfig { token_budget };
            run_batch(&instances, jobs, |i| run_cp(i, &ds, &recorder, &cfg))
        }
        Mode::Dp => {
            let cfg = DpConfig::default();
            run_batch(&instances, jobs, |i| run_dp(i, &ds, &store, &recorder, &cfg))
        }
        Mode::Agent => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
            let out: Vec<(Prediction, Option<AgentRun>)> = pool.install(|| {
                instances
                    .par_iter()
                    .map(|i| run_on_instance(i, &ds, &store, &recorder, &agent_cfg))
                    .collect()
            });
            out.into_iter()
                .map(|(p, r)| {
                    if let Some(r) = r {
                        traces.push((p.instance_id.clone(), r));
                    }
                    p
                })
                .collect()
        }
    };
    if store.checksum()? != checksum {
        bail!("database changed during evaluation");
    }
    let verdicts = score_all(&preds, &instances, &ds)?;
    let report = aggregate_report(&verdicts, &instances)?;
    ensure_parent(report_path)?;

    let pred_path = sibling(report_path, "predictions.jsonl");
    write_predictions(&pred_path, &preds)?;
    run.output(&pred_path);
    fs::write(report_path, serde_json::to_string_pretty(&report)? + "\n")?;
    run.output(report_path);
    let facets = sibling(report_path, "facets.csv");
    fs::write(&facets, report.facet_csv())?;
    run.output(&facets);
    if !traces.is_empty() {
        let path = sibling(report_path, "traces.jsonl");
        let mut text = String::new();
        for (id, r) in &traces {
            text.push_str(&serde_json::to_string(&TraceRecord { instance_id: id, run: r })?);
            text.push('\n');
        }
        fs::write(&path, text)?;
        run.output(&path);
    }
    let log_path = sibling(report_path, "exchanges.jsonl");
    recorder.write_log(&log_path)?;
    run.output(&log_path);
    if let Some(rec) = &backend.record {
        recorder.write_replay(rec)?;
        run.output(rec);
    }
    let o = &report.overall;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}%"));
    println!(
        "{} instances, {} backend calls: Acc {:.2}%  VA {}  EX {}  Acc|EX {}",
        o.n,
        recorder.calls(),
        o.acc,
        pct(o.va),
        pct(o.ex_rate),
        pct(o.acc_given_ex)
    );
    run.finish(&manifest_for(report_path))
}

#[allow(clippy::too_many_arguments)]
fn cmd_agent(
    db: &Path,
    query: &str,
    backend: &BackendArgs,
    bench: Option<&Path>,
    answer_type: Option<AnswerType>,
    budget: usize,
    trace: Option<&Path>,
) -> Result<()> {
    let (store, ds) = open_store(db)?;
    let instances = match (backend.backend, bench) {
        (_, Some(b)) => load_benchmark(b)?,
        (BackendChoice::Oracle, None) => return Err(usage("--backend oracle needs --bench")),
        _ => Vec::new(),
    };
    let answer_type = answer_type.or_else(|| {
        instances
            .iter()
            .find(|i| i.question == query)
            .map(|i| i.answer_type)
    });
    let inner = make_backend(backend, Mode::Agent, &instances, &ds)?;
    let recorder = Recorder::new(inner);
    let cfg = AgentConfig {
        budget,
        ..AgentConfig::default()
    };
    let agent_run = run_agent(query, answer_type, &ds, &store, &recorder, &cfg).map_err(|e| usage(e.to_string()))?;
    if let Some(path) = trace {
        ensure_parent(path)?;
        fs::write(path, agent_run.trace_jsonl())?;
        let mut run = Run::new("agent", json!({"query": query, "backend": backend, "budget": budget}));
        run.input(db);
        run.output(path);
        run.finish(&manifest_for(path))?;
    }
    if let Some(rec) = &backend.record {
        recorder.write_replay(rec)?;
    }
    for note in &agent_run.notes {
        eprintln!("note: {note}");
    }
    println!("{}", agent_run.raw_answer.trim());
    Ok(())
}

fn cmd_report(bench: &Path, db: &Path, predictions: &Path, out: &Path) -> Result<()> {
    let (_, ds) = open_store(db)?;
    let instances = load_benchmark(bench)?;
    let preds = read_predictions(predictions)?;
    let mut run = Run::new("report", json!({}));
    run.input(bench);
    run.input(db);
    run.input(predictions);
    let verdicts = score_all(&preds, &instances, &ds)?;
    let scored: std::collections::HashSet<&str> = preds.iter().map(|p| p.instance_id.as_str()).collect();
    let subset: Vec<QAInstance> = instances
        .into_iter()
        .filter(|i| scored.contains(i.instance_id.as_str()))
        .collect();
    let report = aggregate_report(&verdicts, &subset)?;
    ensure_parent(out)?;
    fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    run.output(out);
    let facets = sibling(out, "facets.csv");
    fs::write(&facets, report.facet_csv())?;
    run.output(&facets);
    println!("Acc {:.2}% over {} predictions", report.overall.acc, report.overall.n);
    run.finish(&manifest_for(out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(2);
    }
    if rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().is_err() {
        log::warn!("thread pool already initialized");
    }

    let result = match &cli.cmd {
        Cmd::Synth { users, days, seed, out, db } => cmd_synth(*users, *days, *seed, out, db.as_deref()).map(|_| true),
        Cmd::Ingest {
            data,
            manifest,
            db,
            force,
        } => cmd_ingest(data, manifest.as_deref(), db, *force).map(|_| true),
        Cmd::Generate {
            db,
            total,
            single,
            seed,
            max_retries,
            out,
        } => cmd_generate(db, *total, *single, *seed, *max_retries, out).map(|_| true),
        Cmd::Validate { db, bench } => cmd_validate(db, bench),
        Cmd::Eval {
            mode,
            bench,
            db,
            backend,
            report,
            limit,
            token_budget,
            budget,
        } => cmd_eval(*mode, bench, db, backend, report, *limit, *token_budget, *budget, jobs).map(|_| true),
        Cmd::Agent {
            db,
            query,
            backend,
            bench,
            answer_type,
            budget,
            trace,
        } => cmd_agent(
            db,
            query,
            backend,
            bench.as_deref(),
            answer_type.map(Into::into),
            *budget,
            trace.as_deref(),
        )
        .map(|_| true),
        Cmd::Report {
            bench,
            db,
            predictions,
            out,
        } => cmd_report(bench, db, predictions, out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
