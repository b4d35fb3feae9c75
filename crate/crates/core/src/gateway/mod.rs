//! Text generation for every model role in the pipeline.
//!
//! All callers go through [`Generator`]. [`Gateway`] wraps a backend and keeps
//! cumulative usage; [`RecordingGenerator`] additionally logs each call so a
//! run trace can list every prompt hash and output.

mod openai;
mod scripted;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use openai::{OpenAiBackend, OpenAiConfig};
pub use scripted::{ScriptEntry, ScriptMatch, ScriptedBackend, ScriptedFailure};

use crate::sha256_hex;

pub const PREDICTOR_MAX_TOKENS: u32 = 256;
pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Predictor,
    Planner,
    Corrector,
    Executor,
    Judge,
    Baseline,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Predictor => "predictor",
            Role::Planner => "planner",
            Role::Corrector => "corrector",
            Role::Executor => "executor",
            Role::Judge => "judge",
            Role::Baseline => "baseline",
        }
    }

    pub fn default_max_tokens(self) -> u32 {
        match self {
            Role::Predictor => PREDICTOR_MAX_TOKENS,
            _ => DEFAULT_MAX_TOKENS,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub role: Role,
    pub prompt: String,
    /// `None` resolves to the role default (256 for the predictor, else 512).
    pub max_output_tokens: Option<u32>,
    pub temperature: f32,
    pub sampling: bool,
}

impl GenerationRequest {
    /// Greedy request with role defaults.
    pub fn new(role: Role, prompt: impl Into<String>) -> Self {
        Self {
            role,
            prompt: prompt.into(),
            max_output_tokens: None,
            temperature: 0.0,
            sampling: false,
        }
    }

    pub fn with_max_tokens(mut self, max: u32) -> Self {
        self.max_output_tokens = Some(max);
        self
    }

    pub fn max_tokens(&self) -> u32 {
        self.max_output_tokens
            .unwrap_or_else(|| self.role.default_max_tokens())
    }

    pub fn prompt_sha256(&self) -> String {
        sha256_hex(&self.prompt)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub usage: Usage,
    pub backend_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("backend unreachable after {attempts} attempt(s): {message}")]
    Unreachable { attempts: u32, message: String },
    #[error("backend rejected request with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("context overflow: {0}")]
    ContextOverflow(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("no scripted response for role {role} (prompt sha256 {prompt_sha256})")]
    NoScriptedResponse { role: Role, prompt_sha256: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_context_overflow(&self) -> bool {
        matches!(self, GatewayError::ContextOverflow(_))
    }
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        (**self).generate(request)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        (**self).generate(request)
    }
}

/// Front door to a backend: rejects empty prompts, normalizes trailing
/// whitespace and accumulates token usage.
pub struct Gateway {
    backend: Box<dyn Generator>,
    totals: Mutex<Usage>,
    calls: AtomicU64,
}

impl Gateway {
    pub fn new(backend: impl Generator + 'static) -> Self {
        Self {
            backend: Box::new(backend),
            totals: Mutex::new(Usage::default()),
            calls: AtomicU64::new(0),
        }
    }

    pub fn total_usage(&self) -> Usage {
        *self.totals.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Generator for Gateway {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut result = self.backend.generate(request)?;
        let trimmed_len = result.text.trim_end().len();
        result.text.truncate(trimmed_len);
        *self.totals.lock().unwrap_or_else(|e| e.into_inner()) += result.usage;
        Ok(result)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: Role,
    pub prompt_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub usage: Usage,
    pub latency_ms: u64,
}

/// Logs every call passing through it, in order.
pub struct RecordingGenerator<'a> {
    inner: &'a dyn Generator,
    log: Mutex<Vec<CallRecord>>,
}

impl<'a> RecordingGenerator<'a> {
    pub fn new(inner: &'a dyn Generator) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn take_calls(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.log.lock().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn usage(&self) -> Usage {
        let log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        let mut total = Usage::default();
        for call in log.iter() {
            total += call.usage;
        }
        total
    }
}

impl Generator for RecordingGenerator<'_> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let outcome = self.inner.generate(request);
        let record = match &outcome {
            Ok(res) => CallRecord {
                role: request.role,
                prompt_sha256: request.prompt_sha256(),
                output: Some(res.text.clone()),
                error: None,
                usage: res.usage,
                latency_ms: res.latency_ms,
            },
            Err(err) => CallRecord {
                role: request.role,
                prompt_sha256: request.prompt_sha256(),
                output: None,
                error: Some(err.to_string()),
                usage: Usage::default(),
                latency_ms: 0,
            },
        };
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(record);
        outcome
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script(lines: &str) -> ScriptedBackend {
        ScriptedBackend::from_jsonl(lines).unwrap()
    }

    #[test]
    fn predictor_defaults_to_256_tokens() {
        let req = GenerationRequest::new(Role::Predictor, "q");
        assert_eq!(req.max_tokens(), 256);
        assert_eq!(req.temperature, 0.0);
        assert!(!req.sampling);
        assert_eq!(GenerationRequest::new(Role::Planner, "q").max_tokens(), 512);
        assert_eq!(GenerationRequest::new(Role::Judge, "q").max_tokens(), 512);
        assert_eq!(
            GenerationRequest::new(Role::Predictor, "q").with_max_tokens(9).max_tokens(),
            9
        );
    }

    #[test]
    fn gateway_trims_trailing_whitespace_and_counts_usage() {
        let gw = Gateway::new(script(
            r#"{"role":"planner","match":{"seq":0},"response":"1. a = F(CTX)  \n\n"}
{"role":"planner","match":{"seq":1},"response":"two words"}"#,
        ));
        let req = GenerationRequest::new(Role::Planner, "plan please");
        let a = gw.generate(&req).unwrap();
        assert_eq!(a.text, "1. a = F(CTX)");
        let b = gw.generate(&req).unwrap();
        let total = gw.total_usage();
        assert_eq!(total.prompt_tokens, a.usage.prompt_tokens + b.usage.prompt_tokens);
        assert_eq!(total.output_tokens, a.usage.output_tokens + b.usage.output_tokens);
        assert_eq!(gw.call_count(), 2);
    }

    #[test]
    fn empty_prompt_rejected() {
        let gw = Gateway::new(script(""));
        let err = gw.generate(&GenerationRequest::new(Role::Judge, "  ")).unwrap_err();
        assert_eq!(err, GatewayError::EmptyPrompt);
    }

    #[test]
    fn recorder_logs_successes_and_failures() {
        let gw = Gateway::new(script(r#"{"role":"judge","match":{"seq":0},"response":"B"}"#));
        let rec = RecordingGenerator::new(&gw);
        rec.generate(&GenerationRequest::new(Role::Judge, "x")).unwrap();
        rec.generate(&GenerationRequest::new(Role::Judge, "x")).unwrap_err();
        let calls = rec.take_calls();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].output.as_deref(), Some("B"));
        assert!(calls[1].error.is_some());
        assert_eq!(calls[0].prompt_sha256, sha256_hex("x"));
    }
}
