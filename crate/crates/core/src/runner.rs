//! Batch runs over a corpus, trace replay and multi-trace comparison.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::config::{AnswerMode, ConfigError, RunConfig, Strategy};
use crate::corpus::{truncate_document, CorpusRecord, Tokenizer};
use crate::executor::PlanExecutor;
use crate::gateway::{CallRecord, GenerationRequest, Generator, RecordingGenerator, Role, Usage};
use crate::metrics::{
    metric_plan, nli_hypotheses, record_metrics, run_judge, window_scores, Aggregate, EntailmentScorer,
    EvaluationInputs, MetricReport, RecordMetrics,
};
use crate::pipeline::{PlanningOutcome, PlanningPipeline};
use crate::prompts::{PromptSet, TemplateKind};
use crate::registry::ActionRegistry;
use crate::sha256_hex;
use crate::trace::{write_event, RecordFinished, RecordStatus, TraceEvent, TRACE_SCHEMA_VERSION};

pub struct RunContext<'a> {
    pub config: &'a RunConfig,
    pub registry: &'a ActionRegistry,
    pub prompts: &'a PromptSet,
    pub generator: &'a dyn Generator,
    pub judge: &'a dyn Generator,
    pub scorer: Option<&'a dyn EntailmentScorer>,
    pub tokenizer: &'a dyn Tokenizer,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("writing trace")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub records: usize,
    pub answered: usize,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub report: MetricReport,
}

pub fn corpus_sha256(records: &[CorpusRecord]) -> String {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("corpus records serialize"));
        text.push('\n');
    }
    sha256_hex(&text)
}

/// Short stable id derived from configuration, corpus content and strategy.
pub fn run_id(config: &RunConfig, corpus_sha256: &str) -> String {
    let config_json = serde_json::to_string(config).expect("config serializes");
    let digest = sha256_hex(&format!("{config_json}\n{corpus_sha256}\n{}", config.strategy));
    digest[..16].to_string()
}

struct RecordOutput {
    events: Vec<TraceEvent>,
    metrics: RecordMetrics,
    usage: Usage,
}

fn baseline_template(strategy: Strategy) -> TemplateKind {
    match strategy {
        Strategy::Gqa => TemplateKind::Gqa,
        Strategy::Cot => TemplateKind::Cot,
        _ => TemplateKind::PlanAndSolve,
    }
}

/// Everything a strategy produced for one record before scoring.
struct Attempt {
    status: RecordStatus,
    answer: Option<String>,
    plan_valid: Option<bool>,
    revisions: Option<u32>,
    corrector_calls: Option<u32>,
    error: Option<String>,
    events: Vec<TraceEvent>,
}

fn attempt_plan(ctx: &RunContext, gen: &dyn Generator, record: &CorpusRecord, doc: &crate::executor::Document) -> Attempt {
    let id = &record.query.id;
    let pipeline_config = ctx.config.effective_pipeline();
    let pipeline = PlanningPipeline::new(gen, ctx.registry, ctx.prompts, &pipeline_config);
    let run = pipeline.run(&record.query);
    let mut events = Vec::new();
    if pipeline_config.use_predictor {
        if let Some(c) = &run.constraints {
            events.push(TraceEvent::Constraints {
                record: id.clone(),
                constraints: c.clone(),
            });
        }
    }
    for (revision, errors) in run.revisions.iter().zip(&run.validations) {
        events.push(TraceEvent::PlanRevision {
            record: id.clone(),
            revision: revision.clone(),
            valid: errors.is_empty(),
            errors: errors.clone(),
        });
    }
    let mut attempt = Attempt {
        status: RecordStatus::NoValidPlan,
        answer: None,
        plan_valid: Some(false),
        revisions: Some(run.revisions.len() as u32),
        corrector_calls: Some(run.corrector_calls),
        error: None,
        events,
    };
    match &run.outcome {
        PlanningOutcome::Planned(final_plan) => {
            attempt.plan_valid = Some(true);
            let executor = PlanExecutor::new(gen, ctx.prompts);
            match executor.execute(&final_plan.plan, &final_plan.snapshot, doc) {
                Ok(result) => {
                    attempt.events.extend(result.evidence.iter().map(|e| TraceEvent::Evidence {
                        record: id.clone(),
                        evidence: e.clone(),
                    }));
                    attempt.answer = Some(match ctx.config.answer_mode {
                        AnswerMode::LastStep => result.final_answer.clone(),
                        AnswerMode::Evidence => result.concatenated_evidence(),
                    });
                    attempt.status = RecordStatus::Answered;
                }
                Err(failure) => {
                    attempt.events.extend(failure.evidence.iter().map(|e| TraceEvent::Evidence {
                        record: id.clone(),
                        evidence: e.clone(),
                    }));
                    attempt.status = RecordStatus::ExecutionFailed;
                    attempt.error = Some(if failure.context_overflow {
                        format!("context overflow: {failure}")
                    } else {
                        failure.to_string()
                    });
                }
            }
        }
        PlanningOutcome::BudgetExhausted(feedback) => {
            attempt.error = Some(format!("no valid plan within budget: {}", feedback.error_message()));
        }
        PlanningOutcome::GatewayFailed { role, error, .. } => {
            attempt.status = RecordStatus::GatewayFailed;
            attempt.error = Some(format!("{role}: {error}"));
        }
    }
    attempt
}

fn attempt_baseline(ctx: &RunContext, gen: &dyn Generator, record: &CorpusRecord, doc: &crate::executor::Document) -> Attempt {
    let prompt = ctx.prompts.render(
        baseline_template(ctx.config.strategy),
        &[("article", &doc.text), ("question", &record.query.question)],
    );
    let (status, answer, error) = match gen.generate(&GenerationRequest::new(Role::Baseline, prompt)) {
        Ok(res) => (RecordStatus::Answered, Some(res.text), None),
        Err(e) => (RecordStatus::GatewayFailed, None, Some(format!("baseline: {e}"))),
    };
    Attempt {
        status,
        answer,
        plan_valid: None,
        revisions: None,
        corrector_calls: None,
        error,
        events: Vec::new(),
    }
}

fn process_record(ctx: &RunContext, record: &CorpusRecord) -> RecordOutput {
    let id = record.query.id.clone();
    let doc = truncate_document(&record.document, &ctx.config.truncation, ctx.tokenizer);
    let truncated = doc.token_count < record.document.token_count;

    let main = RecordingGenerator::new(ctx.generator);
    let attempt = if ctx.config.strategy.is_plan_based() {
        attempt_plan(ctx, &main, record, &doc)
    } else {
        attempt_baseline(ctx, &main, record, &doc)
    };

    let plan = metric_plan(record.dataset, &record.query);
    let judge = RecordingGenerator::new(ctx.judge);
    let mut judge_output = None;
    let mut nli_windows = None;
    if let Some(answer) = &attempt.answer {
        if plan.accuracy {
            match run_judge(&judge, ctx.prompts, answer, &record.query) {
                Ok(out) => judge_output = out,
                Err(e) => log::warn!("record {id}: judge failed: {e}"),
            }
        }
        if let (true, Some(scorer)) = (plan.nli, ctx.scorer) {
            let scored: Result<Vec<Vec<f64>>, _> = nli_hypotheses(record.dataset, &record.query)
                .iter()
                .map(|h| window_scores(answer, h, scorer, ctx.config.nli.windows))
                .collect();
            match scored {
                Ok(w) => nli_windows = Some(w),
                Err(e) => log::warn!("record {id}: entailment scoring failed: {e}"),
            }
        }
    }
    if let Some(err) = &attempt.error {
        log::warn!("record {id}: {err}");
    }

    let metrics = record_metrics(EvaluationInputs {
        dataset: record.dataset,
        query: &record.query,
        split_tags: &record.split_tags,
        answer: attempt.answer.as_deref(),
        judge_output: judge_output.as_deref(),
        nli_windows: nli_windows.as_deref(),
    });

    let calls: Vec<CallRecord> = main.take_calls().into_iter().chain(judge.take_calls()).collect();
    let mut usage = Usage::default();
    let mut latency_ms = 0;
    for c in &calls {
        usage += c.usage;
        latency_ms += c.latency_ms;
    }

    let mut events = vec![TraceEvent::RecordStarted {
        record: id.clone(),
        dataset: record.dataset,
        split_tags: record.split_tags.clone(),
        query: record.query.clone(),
        document_tokens: doc.token_count,
        truncated,
    }];
    events.extend(calls.into_iter().map(|call| TraceEvent::ModelCall {
        record: id.clone(),
        call,
    }));
    events.extend(attempt.events);
    events.push(TraceEvent::RecordFinished(RecordFinished {
        record: id,
        status: attempt.status,
        answer_sha256: attempt.answer.as_deref().map(sha256_hex),
        final_answer: attempt.answer,
        plan_valid: attempt.plan_valid,
        revisions: attempt.revisions,
        corrector_calls: attempt.corrector_calls,
        judge_output,
        nli_windows,
        metrics: metrics.clone(),
        usage,
        latency_ms,
        error: attempt.error,
    }));
    RecordOutput { events, metrics, usage }
}

/// Runs the configured strategy over `records`, streaming trace events to
/// `sink` in corpus order regardless of worker scheduling.
pub fn run(ctx: &RunContext, records: &[CorpusRecord], sink: &mut dyn Write) -> Result<RunOutcome, RunError> {
    ctx.config.check()?;
    let corpus_sha = corpus_sha256(records);
    let id = run_id(ctx.config, &corpus_sha);
    write_event(
        sink,
        &TraceEvent::RunStarted {
            schema_version: TRACE_SCHEMA_VERSION,
            run_id: id.clone(),
            strategy: ctx.config.strategy,
            corpus_sha256: corpus_sha,
            records: records.len(),
            config: ctx.config.clone(),
        },
    )?;

    let mut metrics = Vec::with_capacity(records.len());
    let mut usage = Usage::default();
    let mut write_error = None;
    let next = AtomicUsize::new(0);
    let workers = ctx.config.workers.clamp(1, records.len().max(1));
    let (tx, rx) = mpsc::channel::<(usize, RecordOutput)>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= records.len() {
                    break;
                }
                if tx.send((i, process_record(ctx, &records[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut wanted = 0;
        for (i, output) in rx {
            pending.insert(i, output);
            while let Some(output) = pending.remove(&wanted) {
                wanted += 1;
                if write_error.is_none() {
                    for event in &output.events {
                        if let Err(e) = write_event(sink, event) {
                            write_error = Some(e);
                            break;
                        }
                    }
                }
                usage += output.usage;
                metrics.push(output.metrics);
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e.into());
    }

    let answered = metrics.iter().filter(|m| m.answered).count();
    write_event(
        sink,
        &TraceEvent::RunFinished {
            run_id: id.clone(),
            records: records.len(),
            answered,
            usage,
        },
    )?;
    sink.flush()?;
    Ok(RunOutcome {
        summary: RunSummary {
            run_id: id.clone(),
            records: records.len(),
            answered,
            usage,
        },
        report: MetricReport::new(id, metrics),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub report: MetricReport,
    pub strategy: Strategy,
    /// `(valid plans, records attempted)` for plan-based strategies.
    pub executability: Option<(usize, usize)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("trace has no run_started event")]
    MissingHeader,
    #[error("record_finished for {0} has no matching record_started")]
    Unmatched(String),
}

/// Recomputes all metrics from stored answers, judge outputs and window
/// scores. No model is called.
pub fn replay(events: &[TraceEvent]) -> Result<ReplayOutcome, ReplayError> {
    let (run_id, strategy) = match events.first() {
        Some(TraceEvent::RunStarted { run_id, strategy, .. }) => (run_id.clone(), *strategy),
        _ => return Err(ReplayError::MissingHeader),
    };
    let mut started = HashMap::new();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let (mut valid, mut attempted) = (0, 0);
    for event in events {
        match event {
            TraceEvent::RecordStarted { record, dataset, split_tags, query, .. } => {
                started.insert(record.clone(), (*dataset, split_tags, query));
            }
            TraceEvent::RecordFinished(done) => {
                let (dataset, split_tags, query) = started
                    .remove(&done.record)
                    .ok_or_else(|| ReplayError::Unmatched(done.record.clone()))?;
                if let (Some(answer), Some(sum)) = (&done.final_answer, &done.answer_sha256) {
                    if &sha256_hex(answer) != sum {
                        warnings.push(format!("record {}: answer checksum mismatch; trace was edited", done.record));
                    }
                }
                if let Some(v) = done.plan_valid {
                    attempted += 1;
                    valid += usize::from(v);
                }
                let metrics = record_metrics(EvaluationInputs {
                    dataset,
                    query,
                    split_tags,
                    answer: done.final_answer.as_deref(),
                    judge_output: done.judge_output.as_deref(),
                    nli_windows: done.nli_windows.as_deref(),
                });
                if metrics != done.metrics {
                    warnings.push(format!("record {}: recomputed metrics differ from stored metrics", done.record));
                }
                records.push(metrics);
            }
            _ => {}
        }
    }
    Ok(ReplayOutcome {
        report: MetricReport::new(run_id, records),
        strategy,
        executability: (attempted > 0).then_some((valid, attempted)),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Executability {
    pub valid: usize,
    pub attempted: usize,
    /// Percentage of attempted records whose plan passed validation.
    pub rate: f64,
}

impl Executability {
    pub fn new(valid: usize, attempted: usize) -> Self {
        let rate = if attempted == 0 { 0.0 } else { valid as f64 * 100.0 / attempted as f64 };
        Self { valid, attempted, rate }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverallScores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub run_id: String,
    pub strategy: Strategy,
    pub datasets: BTreeMap<String, Aggregate>,
    /// Unweighted mean of the per-dataset values.
    pub overall: OverallScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executability: Option<Executability>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    /// Records present and answered in every trace.
    pub intersection: usize,
    pub rows: Vec<ComparisonRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn macro_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Aligns replayed traces on the records answered in all of them.
pub fn compare(traces: &[(String, ReplayOutcome)]) -> Comparison {
    let key = |m: &RecordMetrics| (m.dataset, m.id.clone());
    let mut warnings: Vec<String> = traces
        .iter()
        .flat_map(|(label, t)| t.warnings.iter().map(move |w| format!("{label}: {w}")))
        .collect();
    let mut common: Option<BTreeSet<_>> = None;
    let mut all_keys = BTreeSet::new();
    for (_, t) in traces {
        let answered: BTreeSet<_> = t.report.records.iter().filter(|m| m.answered).map(key).collect();
        all_keys.extend(t.report.records.iter().map(key));
        common = Some(match common {
            None => answered,
            Some(c) => c.intersection(&answered).cloned().collect(),
        });
    }
    let common = common.unwrap_or_default();
    if traces.len() > 1 && common.len() < all_keys.len() {
        warnings.push(format!(
            "traces cover different or partially answered records; comparing the {} of {} records answered in every trace",
            common.len(),
            all_keys.len()
        ));
    }
    if common.is_empty() {
        warnings.push("no record is present and answered in every trace".into());
    }
    let rows = traces
        .iter()
        .map(|(label, t)| {
            let kept: Vec<RecordMetrics> = t
                .report
                .records
                .iter()
                .filter(|m| common.contains(&key(m)))
                .cloned()
                .collect();
            let datasets = MetricReport::new(t.report.run_id.clone(), kept).by_dataset;
            let overall = OverallScores {
                accuracy: macro_mean(datasets.values().map(|a| a.accuracy)),
                recall: macro_mean(datasets.values().map(|a| a.recall)),
                nli: macro_mean(datasets.values().map(|a| a.nli)),
            };
            ComparisonRow {
                label: label.clone(),
                run_id: t.report.run_id.clone(),
                strategy: t.strategy,
                datasets,
                overall,
                executability: t.executability.map(|(v, n)| Executability::new(v, n)),
            }
        })
        .collect();
    Comparison {
        schema_version: TRACE_SCHEMA_VERSION,
        intersection: common.len(),
        rows,
        warnings,
    }
}

fn cell(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
}

/// Fixed-width text table: one row per trace, Acc/Rec/NLI per dataset, the
/// macro Overall and the valid-plan rate.
pub fn render_table(comparison: &Comparison) -> String {
    type Getter = fn(&Aggregate) -> Option<f64>;
    let metrics: [(&str, Getter); 3] = [("Acc", |a| a.accuracy), ("Rec", |a| a.recall), ("NLI", |a| a.nli)];
    let datasets: BTreeSet<&String> = comparison.rows.iter().flat_map(|r| r.datasets.keys()).collect();

    let mut header = vec!["Method".to_string()];
    let mut columns: Vec<Box<dyn Fn(&ComparisonRow) -> String>> = Vec::new();
    for ds in datasets {
        for (name, get) in metrics {
            let present = comparison.rows.iter().any(|r| r.datasets.get(ds).and_then(get).is_some());
            if present {
                header.push(format!("{ds}:{name}"));
                let ds = ds.clone();
                columns.push(Box::new(move |r| cell(r.datasets.get(&ds).and_then(get))));
            }
        }
    }
    let overall: [(&str, fn(&OverallScores) -> Option<f64>); 3] =
        [("Acc", |o| o.accuracy), ("Rec", |o| o.recall), ("NLI", |o| o.nli)];
    for (name, get) in overall {
        if comparison.rows.iter().any(|r| get(&r.overall).is_some()) {
            header.push(format!("Overall:{name}"));
            columns.push(Box::new(move |r| cell(get(&r.overall))));
        }
    }
    if comparison.rows.iter().any(|r| r.executability.is_some()) {
        header.push("Valid plans".into());
        columns.push(Box::new(|r| {
            r.executability
                .map_or_else(|| "-".into(), |e| format!("{:.1}% ({}/{})", e.rate, e.valid, e.attempted))
        }));
    }

    let mut lines: Vec<Vec<String>> = vec![header];
    for row in &comparison.rows {
        let mut line = vec![row.label.clone()];
        line.extend(columns.iter().map(|c| c(row)));
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, line) in lines.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if n == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}
