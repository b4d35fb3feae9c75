//! Sliding-window entailment scoring.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{token_recall, MetricError};

pub const DEFAULT_WINDOW: usize = 512;
pub const DEFAULT_STRIDE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl WindowConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.window == 0 || self.stride == 0 {
            return Err("window and stride must be positive".into());
        }
        if self.stride > self.window {
            return Err(format!("stride {} exceeds window {}", self.stride, self.window));
        }
        Ok(())
    }
}

/// Start offsets of the windows covering `len` tokens. The last window may
/// be partial; a sequence no longer than one window gets a single window.
pub fn window_offsets(len: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut offsets = vec![0];
    let mut start = 0;
    while start + window < len {
        start += stride;
        offsets.push(start);
    }
    offsets
}

/// Premise texts, one per window, over whitespace tokens.
pub fn windows(text: &str, config: WindowConfig) -> Vec<String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    window_offsets(tokens.len(), config.window, config.stride)
        .into_iter()
        .map(|start| {
            let end = (start + config.window).min(tokens.len());
            tokens[start..end].join(" ")
        })
        .collect()
}

pub trait EntailmentScorer: Send + Sync {
    /// Probability in [0, 1] that `premise` entails `hypothesis`.
    fn entailment(&self, premise: &str, hypothesis: &str) -> Result<f64, MetricError>;
}

impl<F> EntailmentScorer for F
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    fn entailment(&self, premise: &str, hypothesis: &str) -> Result<f64, MetricError> {
        Ok(self(premise, hypothesis))
    }
}

/// Offline stand-in: the share of hypothesis tokens found in the premise.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapStubScorer;

impl EntailmentScorer for OverlapStubScorer {
    fn entailment(&self, premise: &str, hypothesis: &str) -> Result<f64, MetricError> {
        Ok(token_recall(premise, hypothesis).unwrap_or(0.0))
    }
}

/// Client for a scorer service: `POST {premise, hypothesis}` returning
/// `{entailment_probability}`.
pub struct HttpEntailmentScorer {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpEntailmentScorer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, MetricError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| MetricError::ScorerUnreachable(e.to_string()))?;
        Ok(Self {
            client,
            url: url.into(),
        })
    }
}

#[derive(Deserialize)]
struct ScorerReply {
    entailment_probability: f64,
}

impl EntailmentScorer for HttpEntailmentScorer {
    fn entailment(&self, premise: &str, hypothesis: &str) -> Result<f64, MetricError> {
        let response = self
            .client
            .post(&self.url)
            .json(&json!({"premise": premise, "hypothesis": hypothesis}))
            .send()
            .map_err(|e| MetricError::ScorerUnreachable(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(MetricError::ScorerUnreachable(format!("status {status}")));
        }
        let reply: ScorerReply = response
            .json()
            .map_err(|e| MetricError::ScorerMalformed(e.to_string()))?;
        let p = reply.entailment_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(MetricError::ScorerMalformed(format!("probability {p} outside [0, 1]")));
        }
        Ok(p)
    }
}

/// Per-window entailment scores of `prediction` against `hypothesis`.
pub fn window_scores(
    prediction: &str,
    hypothesis: &str,
    scorer: &dyn EntailmentScorer,
    config: WindowConfig,
) -> Result<Vec<f64>, MetricError> {
    if hypothesis.trim().is_empty() {
        return Err(MetricError::EmptyHypothesis);
    }
    windows(prediction, config)
        .iter()
        .map(|premise| scorer.entailment(premise, hypothesis))
        .collect()
}

pub fn max_score(scores: &[f64]) -> Option<f64> {
    scores.iter().copied().reduce(f64::max)
}

/// Maximum entailment probability over the windows of `prediction`.
pub fn nli_score(
    prediction: &str,
    hypothesis: &str,
    scorer: &dyn EntailmentScorer,
    config: WindowConfig,
) -> Result<f64, MetricError> {
    let scores = window_scores(prediction, hypothesis, scorer, config)?;
    Ok(max_score(&scores).unwrap_or(0.0))
}
