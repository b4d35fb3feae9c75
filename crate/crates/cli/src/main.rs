//! `pitfall`: corpus ingestion, batch runs, replay and reporting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use pitfall_core::config::{BackendConfig, BackendKind, ScorerKind};
use pitfall_core::corpus::{load_corpus, read_native, write_native, LoadOptions};
use pitfall_core::metrics::{HttpEntailmentScorer, OverlapStubScorer};
use pitfall_core::runner::{compare, render_table, replay, run, RunContext};
use pitfall_core::trace::read_trace;
use pitfall_core::{
    parse_plan, validate_plan, ActionRegistry, DatasetId, EntailmentScorer, Gateway, Generator, OpenAiBackend,
    PromptSet, RunConfig, ScriptedBackend, Strategy, Validation, WhitespaceTokenizer,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CORPUS: u8 = 3;
const EXIT_ALL_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "pitfall", version, about = "Pitfall-aware planning for long-document QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw dataset file into the native corpus format.
    Ingest(IngestArgs),
    /// Run a strategy over a corpus, writing trace.jsonl and report.json.
    Run(RunArgs),
    /// Recompute metrics from a trace without calling any model.
    Replay(ReplayArgs),
    /// Compare several traces in one table.
    Report(ReportArgs),
    /// Parse and validate a plan file against the action registry.
    ValidatePlan(ValidatePlanArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    dataset: DatasetId,
    /// Raw dataset file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Companion documents file (ConditionalQA).
    #[arg(long)]
    docs: Option<PathBuf>,
    /// Split tag added to every record.
    #[arg(long)]
    split: Option<String>,
    /// Output corpus file (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Native corpus file produced by `ingest`.
    #[arg(long)]
    corpus: PathBuf,
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Correction budget (maximum corrector calls per query).
    #[arg(long)]
    budget: Option<u32>,
    /// Maximum number of negative constraints kept.
    #[arg(long)]
    max_constraints: Option<usize>,
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Script for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Trace files, one per method.
    #[arg(long = "in", required = true)]
    inputs: Vec<PathBuf>,
    /// Row labels, in the order of `--in`; defaults to each trace's strategy.
    #[arg(long = "label")]
    labels: Vec<String>,
    /// Also write the comparison as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ValidatePlanArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Action registry JSON; the built-in registry when absent.
    #[arg(long)]
    registry: Option<PathBuf>,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(args) => ingest(args),
        Command::Run(args) => run_command(args),
        Command::Replay(args) => replay_command(args),
        Command::Report(args) => report(args),
        Command::ValidatePlan(args) => validate(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

fn ingest(args: IngestArgs) -> Result<u8, Failure> {
    let options = LoadOptions {
        documents: args.docs.as_deref(),
        split: args.split,
    };
    let loaded = load_corpus(&args.input, args.dataset, &options).exit_with(EXIT_CORPUS)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    write_native(&loaded.records, &args.out).exit_with(EXIT_CORPUS)?;
    println!("wrote {} records to {}", loaded.records.len(), args.out.display());
    Ok(0)
}

/// Resolves `path` against `base` unless it is absolute.
fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn build_backend(config: &BackendConfig, base: &Path) -> anyhow::Result<Gateway> {
    Ok(match config.kind {
        BackendKind::Scripted => {
            let script = config.script.as_ref().ok_or_else(|| anyhow!("scripted backend needs --script"))?;
            Gateway::new(ScriptedBackend::from_path(&resolve(base, script))?)
        }
        BackendKind::Openai => Gateway::new(OpenAiBackend::new(config.openai.clone())?),
    })
}

fn run_command(args: RunArgs) -> Result<u8, Failure> {
    let (mut config, config_dir) = match &args.config {
        Some(path) => {
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::from_path(path).exit_with(EXIT_CONFIG)?, dir)
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    // Paths from the config file are relative to it; paths from flags to the working directory.
    let mut script_base = config_dir.clone();
    if let Some(s) = args.strategy {
        config.strategy = s;
    }
    if let Some(b) = args.budget {
        config.pipeline.budget = b;
    }
    if let Some(k) = args.max_constraints {
        config.pipeline.max_constraints = k;
    }
    if let Some(kind) = args.backend {
        config.backend.kind = kind;
    }
    if let Some(script) = args.script {
        config.backend.script = Some(script);
        script_base = PathBuf::new();
    }
    if let Some(endpoint) = args.endpoint {
        config.backend.openai.endpoint = endpoint;
    }
    if let Some(model) = args.model {
        config.backend.openai.model = model;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    config.check().exit_with(EXIT_CONFIG)?;

    let registry = match &config.registry_path {
        Some(p) => ActionRegistry::from_path(&resolve(&config_dir, p)).exit_with(EXIT_CONFIG)?,
        None => ActionRegistry::builtin(),
    };
    let prompts = match &config.templates_dir {
        Some(dir) => PromptSet::with_overrides(&resolve(&config_dir, dir))
            .context("loading templates")
            .exit_with(EXIT_CONFIG)?,
        None => PromptSet::builtin(),
    };
    let generator = build_backend(&config.backend, &script_base).exit_with(EXIT_CONFIG)?;
    let judge = match &config.judge_backend {
        Some(jb) => Some(build_backend(jb, &config_dir).exit_with(EXIT_CONFIG)?),
        None => None,
    };
    let judge_ref: &dyn Generator = judge.as_ref().map_or(&generator, |j| j);
    let scorer: Option<Box<dyn EntailmentScorer>> = match config.nli.scorer {
        ScorerKind::None => None,
        ScorerKind::Stub => Some(Box::new(OverlapStubScorer)),
        ScorerKind::Http => Some(Box::new(
            HttpEntailmentScorer::new(
                config.nli.endpoint.clone().unwrap_or_default(),
                Duration::from_secs(config.nli.timeout_secs),
            )
            .exit_with(EXIT_CONFIG)?,
        )),
    };

    let loaded = read_native(&args.corpus).exit_with(EXIT_CORPUS)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .exit_with(EXIT_FAILURE)?;
    let trace_path = args.out.join("trace.jsonl");
    let file = File::create(&trace_path)
        .with_context(|| format!("creating {}", trace_path.display()))
        .exit_with(EXIT_FAILURE)?;
    let mut sink = BufWriter::new(file);
    let ctx = RunContext {
        config: &config,
        registry: &registry,
        prompts: &prompts,
        generator: &generator,
        judge: judge_ref,
        scorer: scorer.as_deref(),
        tokenizer: &WhitespaceTokenizer,
    };
    let outcome = run(&ctx, &loaded.records, &mut sink).exit_with(EXIT_FAILURE)?;
    sink.flush().exit_with(EXIT_FAILURE)?;

    let report_path = args.out.join("report.json");
    std::fs::write(&report_path, outcome.report.to_json())
        .with_context(|| format!("writing {}", report_path.display()))
        .exit_with(EXIT_FAILURE)?;
    let s = &outcome.summary;
    println!(
        "run {}: {}/{} records answered, {} prompt + {} output tokens",
        s.run_id, s.answered, s.records, s.usage.prompt_tokens, s.usage.output_tokens
    );
    println!("trace: {}\nreport: {}", trace_path.display(), report_path.display());
    if s.records > 0 && s.answered == 0 {
        eprintln!("error: no record produced an answer");
        return Ok(EXIT_ALL_FAILED);
    }
    Ok(0)
}

fn replay_command(args: ReplayArgs) -> Result<u8, Failure> {
    let events = read_trace(&args.input).exit_with(EXIT_FAILURE)?;
    let outcome = replay(&events).exit_with(EXIT_FAILURE)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let json = outcome.report.to_json();
    match &args.out {
        Some(path) => std::fs::write(path, json)
            .with_context(|| format!("writing {}", path.display()))
            .exit_with(EXIT_FAILURE)?,
        None => print!("{json}"),
    }
    Ok(0)
}

fn report(args: ReportArgs) -> Result<u8, Failure> {
    if !args.labels.is_empty() && args.labels.len() != args.inputs.len() {
        return Err(Failure {
            code: EXIT_CONFIG,
            error: anyhow!("{} labels for {} traces", args.labels.len(), args.inputs.len()),
        });
    }
    let mut traces = Vec::new();
    for (i, path) in args.inputs.iter().enumerate() {
        let events = read_trace(path).exit_with(EXIT_FAILURE)?;
        let outcome = replay(&events)
            .with_context(|| format!("replaying {}", path.display()))
            .exit_with(EXIT_FAILURE)?;
        let label = args.labels.get(i).cloned().unwrap_or_else(|| outcome.strategy.to_string());
        traces.push((label, outcome));
    }
    let comparison = compare(&traces);
    for w in &comparison.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", render_table(&comparison));
    if let Some(path) = &args.json {
        let json = serde_json::to_string_pretty(&comparison).exit_with(EXIT_FAILURE)?;
        std::fs::write(path, json + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .exit_with(EXIT_FAILURE)?;
    }
    Ok(0)
}

fn validate(args: ValidatePlanArgs) -> Result<u8, Failure> {
    let registry = match &args.registry {
        Some(p) => ActionRegistry::from_path(p).exit_with(EXIT_CONFIG)?,
        None => ActionRegistry::builtin(),
    };
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))
        .exit_with(EXIT_FAILURE)?;
    let plan = match parse_plan(&text) {
        Ok(plan) => plan,
        Err(e) => {
            println!("{e}");
            return Ok(EXIT_FAILURE);
        }
    };
    for w in &plan.warnings {
        eprintln!("warning: {w}");
    }
    match validate_plan(&plan, &registry) {
        Validation::Valid => {
            println!("valid: {} steps", plan.steps.len());
            Ok(0)
        }
        Validation::Invalid(feedback) => {
            println!("{}", feedback.error_message());
            Ok(EXIT_FAILURE)
        }
    }
}
