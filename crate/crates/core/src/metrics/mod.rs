//! Answer scoring: token recall, windowed entailment, judge-based accuracy
//! and per-dataset aggregation. Reported values are on a 0-100 scale.

mod nli;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::DatasetId;
use crate::gateway::{GatewayError, GenerationRequest, Generator, Role};
use crate::pipeline::Query;
use crate::prompts::{adapt_judge_template, option_letter, render, render_options, PromptSet, TemplateKind};

pub use nli::{
    max_score, nli_score, window_offsets, window_scores, windows, EntailmentScorer,
    HttpEntailmentScorer, OverlapStubScorer, WindowConfig, DEFAULT_STRIDE, DEFAULT_WINDOW,
};

pub const METRIC_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("gold answer is empty after normalization")]
    EmptyGold,
    #[error("entailment hypothesis is empty")]
    EmptyHypothesis,
    #[error("entailment scorer unreachable: {0}")]
    ScorerUnreachable(String),
    #[error("entailment scorer reply malformed: {0}")]
    ScorerMalformed(String),
}

/// Lowercased whitespace tokens with punctuation removed.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Multiset overlap of prediction and gold tokens over the gold token count.
pub fn token_recall(prediction: &str, gold: &str) -> Result<f64, MetricError> {
    let gold_tokens = normalize_tokens(gold);
    if gold_tokens.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let mut available: HashMap<String, usize> = HashMap::new();
    for t in normalize_tokens(prediction) {
        *available.entry(t).or_default() += 1;
    }
    let mut hits = 0usize;
    for t in &gold_tokens {
        if let Some(n) = available.get_mut(t).filter(|n| **n > 0) {
            *n -= 1;
            hits += 1;
        }
    }
    Ok(hits as f64 / gold_tokens.len() as f64)
}

/// Best recall over several gold answers; `None` when none is usable.
pub fn best_recall(prediction: &str, golds: &[String]) -> Option<f64> {
    golds
        .iter()
        .filter_map(|g| token_recall(prediction, g).ok())
        .reduce(f64::max)
}

pub fn declarativize(question: &str, gold: &str) -> String {
    format!("The answer to {question} is {gold}")
}

pub fn scale(fraction: f64) -> f64 {
    fraction * 100.0
}

/// First capital letter among the first `option_count` letters that is not
/// part of a longer word.
pub fn extract_letter(output: &str, option_count: usize) -> Option<char> {
    let chars: Vec<char> = output.chars().collect();
    let allowed = |c: char| (0..option_count).any(|i| option_letter(i) == c);
    chars.iter().enumerate().find_map(|(i, &c)| {
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1).copied();
        let standalone = !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric);
        (allowed(c) && standalone).then_some(c)
    })
}

pub fn judge_prompt(prompts: &PromptSet, answer: &str, query: &Query) -> Option<String> {
    let options = query.options.as_ref()?;
    let template = adapt_judge_template(prompts.get(TemplateKind::Judge), options.len());
    Some(render(
        &template,
        &[
            ("open_answer", answer),
            ("question", &query.question),
            ("options", &render_options(options)),
        ],
    ))
}

/// Asks the judge to map a free-form answer to an option. Returns the raw
/// judge output, or `None` for queries without options.
pub fn run_judge(
    generator: &dyn Generator,
    prompts: &PromptSet,
    answer: &str,
    query: &Query,
) -> Result<Option<String>, GatewayError> {
    let Some(prompt) = judge_prompt(prompts, answer, query) else {
        return Ok(None);
    };
    let result = generator.generate(&GenerationRequest::new(Role::Judge, prompt))?;
    Ok(Some(result.text))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgeDecision {
    pub choice: Option<char>,
    pub correct: Option<bool>,
}

pub fn judge_map(judge_output: &str, query: &Query) -> JudgeDecision {
    let count = query.options.as_ref().map_or(0, Vec::len);
    let choice = extract_letter(judge_output, count);
    let correct = match (choice, query.gold_option) {
        (Some(c), Some(gold)) => Some(c == option_letter(gold)),
        _ => None,
    };
    JudgeDecision { choice, correct }
}

/// Which metrics a record is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricPlan {
    pub accuracy: bool,
    pub recall: bool,
    pub nli: bool,
}

pub fn metric_plan(dataset: DatasetId, query: &Query) -> MetricPlan {
    let has_gold = query.gold.iter().any(|g| !g.trim().is_empty());
    MetricPlan {
        accuracy: dataset != DatasetId::Qasper && query.options.is_some() && query.gold_option.is_some(),
        recall: dataset != DatasetId::Conditionalqa && has_gold,
        nli: has_gold,
    }
}

/// Entailment hypotheses; binary ConditionalQA golds are turned into statements.
pub fn nli_hypotheses(dataset: DatasetId, query: &Query) -> Vec<String> {
    let golds = query.gold.iter().filter(|g| !g.trim().is_empty());
    match dataset {
        DatasetId::Conditionalqa => golds.take(1).map(|g| declarativize(&query.question, g)).collect(),
        _ => golds.cloned().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub id: String,
    pub dataset: DatasetId,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub split_tags: Vec<String>,
    pub answered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_choice: Option<char>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    /// Accuracy applies but the judge output had no usable letter.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unjudged: bool,
}

/// Stored evaluation inputs for one record; enough to rebuild its metrics
/// without any model call.
#[derive(Debug, Clone, Copy)]
pub struct EvaluationInputs<'a> {
    pub dataset: DatasetId,
    pub query: &'a Query,
    pub split_tags: &'a [String],
    pub answer: Option<&'a str>,
    pub judge_output: Option<&'a str>,
    /// Window scores per hypothesis; `None` when scoring was unavailable.
    pub nli_windows: Option<&'a [Vec<f64>]>,
}

pub fn record_metrics(inputs: EvaluationInputs) -> RecordMetrics {
    let mut m = RecordMetrics {
        id: inputs.query.id.clone(),
        dataset: inputs.dataset,
        split_tags: inputs.split_tags.to_vec(),
        answered: inputs.answer.is_some(),
        recall: None,
        nli: None,
        judge_choice: None,
        correct: None,
        unjudged: false,
    };
    let Some(answer) = inputs.answer else {
        return m;
    };
    let plan = metric_plan(inputs.dataset, inputs.query);
    if plan.recall {
        m.recall = best_recall(answer, &inputs.query.gold).map(scale);
    }
    if plan.nli {
        m.nli = inputs
            .nli_windows
            .filter(|w| !w.is_empty())
            .and_then(|per_hyp| per_hyp.iter().filter_map(|w| max_score(w)).reduce(f64::max))
            .map(scale);
    }
    if plan.accuracy {
        match inputs.judge_output.map(|out| judge_map(out, inputs.query)) {
            Some(JudgeDecision { choice: Some(c), correct }) => {
                m.judge_choice = Some(c);
                m.correct = correct;
            }
            _ => m.unjudged = true,
        }
    }
    m
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub records: usize,
    pub answered: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub judged: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    pub recall_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli: Option<f64>,
    pub nli_count: usize,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

impl Aggregate {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a RecordMetrics>) -> Self {
        let (mut acc, mut rec, mut nli) = (Vec::new(), Vec::new(), Vec::new());
        let (mut n, mut answered) = (0, 0);
        for r in records {
            n += 1;
            answered += usize::from(r.answered);
            if let Some(c) = r.correct {
                acc.push(if c { 100.0 } else { 0.0 });
            }
            rec.extend(r.recall);
            nli.extend(r.nli);
        }
        Self {
            records: n,
            answered,
            accuracy: mean(&acc),
            judged: acc.len(),
            recall: mean(&rec),
            recall_count: rec.len(),
            nli: mean(&nli),
            nli_count: nli.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub run_id: String,
    pub records: Vec<RecordMetrics>,
    pub by_dataset: BTreeMap<String, Aggregate>,
    /// Keyed `dataset/tag`.
    pub by_split: BTreeMap<String, Aggregate>,
}

impl MetricReport {
    pub fn new(run_id: impl Into<String>, records: Vec<RecordMetrics>) -> Self {
        let mut datasets: BTreeMap<String, Vec<&RecordMetrics>> = BTreeMap::new();
        let mut splits: BTreeMap<String, Vec<&RecordMetrics>> = BTreeMap::new();
        for r in &records {
            datasets.entry(r.dataset.to_string()).or_default().push(r);
            for tag in &r.split_tags {
                splits.entry(format!("{}/{tag}", r.dataset)).or_default().push(r);
            }
        }
        let by_dataset = datasets.into_iter().map(|(k, v)| (k, Aggregate::of(v))).collect();
        let by_split = splits.into_iter().map(|(k, v)| (k, Aggregate::of(v))).collect();
        Self {
            schema_version: METRIC_SCHEMA_VERSION,
            run_id: run_id.into(),
            records,
            by_dataset,
            by_split,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes") + "\n"
    }
}
