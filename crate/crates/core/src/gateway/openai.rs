//! OpenAI-compatible chat-completions backend.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{GatewayError, GenerationRequest, GenerationResult, Generator, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenAiConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`. `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
            max_retries: 3,
            initial_backoff_ms: 500,
        }
    }
}

pub struct OpenAiBackend {
    client: reqwest::blocking::Client,
    config: OpenAiConfig,
    api_key: Option<String>,
}

impl std::fmt::Debug for OpenAiBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiBackend")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(Result<GenerationResult, GatewayError>),
    Retry(String),
}

impl OpenAiBackend {
    /// Reads the API key from the configured environment variable, if set.
    pub fn new(config: OpenAiConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: OpenAiConfig, api_key: Option<String>) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(format!("building HTTP client: {e}")))?;
        Ok(Self {
            client,
            config,
            api_key,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn body(&self, request: &GenerationRequest) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens(),
        })
    }

    fn attempt(&self, request: &GenerationRequest) -> Attempt {
        let started = Instant::now();
        let mut builder = self.client.post(self.url()).json(&self.body(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = response.status();
        let text = match response.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("status {status}: {}", snippet(&text)));
        }
        if !status.is_success() {
            let lower = text.to_ascii_lowercase();
            let err = if lower.contains("context_length_exceeded") || lower.contains("maximum context length") {
                GatewayError::ContextOverflow(snippet(&text))
            } else {
                GatewayError::Rejected {
                    status: status.as_u16(),
                    message: snippet(&text),
                }
            };
            return Attempt::Done(Err(err));
        }
        Attempt::Done(parse_response(&text, started.elapsed()))
    }
}

fn parse_response(text: &str, elapsed: Duration) -> Result<GenerationResult, GatewayError> {
    let parsed: ChatResponse =
        serde_json::from_str(text).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
    let content = choice.message.content.unwrap_or_default();
    if content.is_empty() && choice.finish_reason.as_deref() != Some("length") {
        return Err(GatewayError::MalformedResponse("empty completion".into()));
    }
    let usage = parsed.usage.map_or(Usage::default(), |u| Usage {
        prompt_tokens: u.prompt_tokens,
        output_tokens: u.completion_tokens,
    });
    Ok(GenerationResult {
        text: content,
        usage,
        backend_id: "openai-compatible".into(),
        latency_ms: elapsed.as_millis() as u64,
    })
}

fn snippet(s: &str) -> String {
    s.chars().take(300).collect()
}

impl Generator for OpenAiBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(request) {
                Attempt::Done(result) => return result,
                Attempt::Retry(message) => {
                    log::warn!("{} request attempt {attempt}/{attempts} failed: {message}", request.role);
                    last = message;
                }
            }
            if attempt < attempts {
                std::thread::sleep(backoff);
                backoff = backoff.saturating_mul(2);
            }
        }
        Err(GatewayError::Unreachable {
            attempts,
            message: last,
        })
    }
}
