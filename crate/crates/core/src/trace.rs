//! JSONL run traces: one event per line, records in corpus order.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Strategy};
use crate::corpus::DatasetId;
use crate::executor::EvidenceRecord;
use crate::gateway::{CallRecord, Usage};
use crate::metrics::RecordMetrics;
use crate::pipeline::{NegativeConstraintSet, PlanRevision, Query};
use crate::registry::ValidationError;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordStatus {
    Answered,
    /// Correction budget spent without a valid plan.
    NoValidPlan,
    GatewayFailed,
    ExecutionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    RunStarted {
        schema_version: u32,
        run_id: String,
        strategy: Strategy,
        corpus_sha256: String,
        records: usize,
        config: RunConfig,
    },
    RecordStarted {
        record: String,
        dataset: DatasetId,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        split_tags: Vec<String>,
        query: Query,
        document_tokens: usize,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        truncated: bool,
    },
    ModelCall {
        record: String,
        #[serde(flatten)]
        call: CallRecord,
    },
    Constraints {
        record: String,
        #[serde(flatten)]
        constraints: NegativeConstraintSet,
    },
    PlanRevision {
        record: String,
        revision: PlanRevision,
        valid: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        errors: Vec<ValidationError>,
    },
    Evidence {
        record: String,
        #[serde(flatten)]
        evidence: EvidenceRecord,
    },
    RecordFinished(RecordFinished),
    RunFinished {
        run_id: String,
        records: usize,
        answered: usize,
        usage: Usage,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFinished {
    pub record: String,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_sha256: Option<String>,
    /// Whether planning produced a valid plan; absent for single-call strategies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_valid: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revisions: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrector_calls: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_output: Option<String>,
    /// Entailment window scores, one list per hypothesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_windows: Option<Vec<Vec<f64>>>,
    pub metrics: RecordMetrics,
    pub usage: Usage,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("reading trace {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: trace schema version {found} is not supported (expected {expected})")]
    SchemaVersion {
        path: String,
        found: u32,
        expected: u32,
    },
}

pub fn write_event(out: &mut dyn Write, event: &TraceEvent) -> std::io::Result<()> {
    let line = serde_json::to_string(event).map_err(std::io::Error::other)?;
    writeln!(out, "{line}")
}

/// Reads every event and checks the schema version of `run_started`.
pub fn read_trace(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    let io = |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut events = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| TraceError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        if events.is_empty() {
            // Check the version before the full schema so old traces get a clear error.
            let head: serde_json::Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            if head.get("event").and_then(|e| e.as_str()) != Some("run_started") {
                return Err(malformed("first event must be run_started".into()));
            }
            let found = head.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
            if found != TRACE_SCHEMA_VERSION {
                return Err(TraceError::SchemaVersion {
                    path: path.display().to_string(),
                    found,
                    expected: TRACE_SCHEMA_VERSION,
                });
            }
        }
        events.push(serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?);
    }
    if events.is_empty() {
        return Err(TraceError::Malformed {
            path: path.display().to_string(),
            line: 0,
            message: "empty trace".into(),
        });
    }
    Ok(events)
}
