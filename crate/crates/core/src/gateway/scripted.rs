//! Deterministic replay backend driven by a JSONL script.
//!
//! Each line is `{"role": ..., "match": {"prompt_sha256": "..."} | {"seq": N},
//! "response": "..."}`. Hash entries answer a specific prompt every time it
//! is seen. Sequence entries form a per-role queue consumed in `seq` order
//! by any prompt that has no hash entry.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{GatewayError, GenerationRequest, GenerationResult, Generator, Role, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMatch {
    PromptSha256(String),
    Seq(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptedFailure {
    Unreachable,
    ContextOverflow,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub role: Role,
    #[serde(rename = "match")]
    pub matcher: ScriptMatch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Simulated failure instead of a response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ScriptedFailure>,
}

type Reply = Result<String, ScriptedFailure>;

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    by_hash: HashMap<(Role, String), Reply>,
    queues: Mutex<HashMap<Role, VecDeque<Reply>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("script line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("reading script {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl ScriptedBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut by_hash = HashMap::new();
        let mut seq: HashMap<Role, Vec<(u64, Reply)>> = HashMap::new();
        for entry in entries {
            let reply = match (entry.response, entry.error) {
                (_, Some(failure)) => Err(failure),
                (Some(text), None) => Ok(text),
                (None, None) => Ok(String::new()),
            };
            match entry.matcher {
                ScriptMatch::PromptSha256(hash) => {
                    by_hash.insert((entry.role, hash.to_ascii_lowercase()), reply);
                }
                ScriptMatch::Seq(n) => seq.entry(entry.role).or_default().push((n, reply)),
            }
        }
        let queues = seq
            .into_iter()
            .map(|(role, mut items)| {
                items.sort_by_key(|(n, _)| *n);
                (role, items.into_iter().map(|(_, r)| r).collect())
            })
            .collect();
        Self {
            by_hash,
            queues: Mutex::new(queues),
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ScriptError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| ScriptError::Line {
                line: i + 1,
                message: e.to_string(),
            })?;
            if entry.response.is_none() && entry.error.is_none() {
                return Err(ScriptError::Line {
                    line: i + 1,
                    message: "entry needs a response or an error".into(),
                });
            }
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn from_path(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    fn lookup(&self, request: &GenerationRequest) -> Option<Reply> {
        let hash = request.prompt_sha256();
        if let Some(reply) = self.by_hash.get(&(request.role, hash)) {
            return Some(reply.clone());
        }
        self.queues
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get_mut(&request.role)
            .and_then(VecDeque::pop_front)
    }
}

fn whitespace_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl Generator for ScriptedBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        match self.lookup(request) {
            Some(Ok(text)) => Ok(GenerationResult {
                usage: Usage {
                    prompt_tokens: whitespace_tokens(&request.prompt),
                    output_tokens: whitespace_tokens(&text),
                },
                text,
                backend_id: "scripted".into(),
                latency_ms: 0,
            }),
            Some(Err(failure)) => Err(match failure {
                ScriptedFailure::Unreachable => GatewayError::Unreachable {
                    attempts: 1,
                    message: "scripted failure".into(),
                },
                ScriptedFailure::ContextOverflow => {
                    GatewayError::ContextOverflow("scripted failure".into())
                }
                ScriptedFailure::Malformed => {
                    GatewayError::MalformedResponse("scripted failure".into())
                }
            }),
            None => Err(GatewayError::NoScriptedResponse {
                role: request.role,
                prompt_sha256: request.prompt_sha256(),
            }),
        }
    }
}
