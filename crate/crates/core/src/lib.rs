//! Pitfall-aware planning for long-document question answering.
//!
//! A query goes through pitfall prediction, constraint-aware plan generation
//! and a bounded validate/correct loop, then the validated plan is executed
//! step by step against the document. Metrics, traces and the batch runner
//! sit on top.

pub mod config;
pub mod corpus;
pub mod dsl;
pub mod executor;
pub mod metrics;
pub mod gateway;
pub mod pipeline;
pub mod prompts;
pub mod registry;
pub mod runner;
pub mod trace;

use sha2::{Digest, Sha256};

pub use config::{RunConfig, Strategy};
pub use corpus::{CorpusRecord, DatasetId, Tokenizer, WhitespaceTokenizer};
pub use dsl::{parse_plan, print_plan, ActionDeclaration, ArgumentValue, ParseFailure, Plan, PlanStep};
pub use executor::{Document, EvidenceRecord, ExecutionResult, PlanExecutor};
pub use gateway::{
    Gateway, GatewayError, GenerationRequest, GenerationResult, Generator, OpenAiBackend,
    OpenAiConfig, Role, ScriptedBackend, Usage,
};
pub use pipeline::{
    NegativeConstraintSet, PipelineConfig, PlanRevision, PlanningOutcome, PlanningPipeline, Query,
};
pub use metrics::{EntailmentScorer, MetricReport, RecordMetrics};
pub use prompts::{PromptSet, TemplateKind};
pub use registry::{
    validate_plan, ActionRegistry, ActionSignature, Arity, Validation, ValidationError,
    ValidationErrorKind, ValidationFeedback,
};

pub use trace::TraceEvent;

/// Lowercase hex SHA-256 of a UTF-8 string.
pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
