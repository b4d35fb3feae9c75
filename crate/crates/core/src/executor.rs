//! Step-by-step execution of a validated plan over one document.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::Tokenizer;
use crate::dsl::{ArgumentValue, Plan, PlanStep};
use crate::gateway::{GatewayError, GenerationRequest, Generator, Role, Usage};
use crate::prompts::{PromptSet, TemplateKind};
use crate::registry::ActionRegistry;

/// Action evaluated locally by joining its resolved arguments with newlines.
pub const CONCAT_ACTION: &str = "CONCAT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub token_count: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, tokenizer: &dyn Tokenizer) -> Self {
        let text = text.into();
        Self {
            id: id.into(),
            token_count: tokenizer.count(&text),
            text,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VariableStore {
    bindings: IndexMap<String, String>,
}

impl VariableStore {
    pub fn bind(&mut self, name: &str, value: String) -> Result<(), ExecError> {
        if self.bindings.contains_key(name) {
            return Err(ExecError::Rebound(name.to_string()));
        }
        self.bindings.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.bindings.get(name).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub step_index: usize,
    pub action: String,
    pub output_name: String,
    /// Argument values after substitution; the document shows as `<document ID>`.
    pub resolved_arguments: Vec<String>,
    pub output: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub model_free: bool,
    pub usage: Usage,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub evidence: Vec<EvidenceRecord>,
    /// Output of the last step.
    pub final_answer: String,
}

impl ExecutionResult {
    /// All step outputs joined by blank lines, for scoring the full evidence.
    pub fn concatenated_evidence(&self) -> String {
        self.evidence
            .iter()
            .map(|e| e.output.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("variable {0} is read before it is bound")]
    Unbound(String),
    #[error("variable {0} is bound twice")]
    Rebound(String),
    #[error("plan has no steps")]
    EmptyPlan,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("step {step_index} failed: {error}")]
pub struct ExecutionFailure {
    pub step_index: usize,
    /// Evidence of the steps that completed before the failure.
    pub evidence: Vec<EvidenceRecord>,
    pub error: ExecError,
    pub context_overflow: bool,
}

fn document_marker(doc: &Document) -> String {
    format!("<document {}>", doc.id)
}

/// Resolves each argument: CTX to the document marker, literals verbatim,
/// variables to their stored text.
pub fn resolve_arguments(
    step: &PlanStep,
    store: &VariableStore,
    doc: &Document,
) -> Result<Vec<String>, ExecError> {
    step.arguments
        .iter()
        .map(|arg| match arg {
            ArgumentValue::ContextRef => Ok(document_marker(doc)),
            ArgumentValue::StringLiteral(s) => Ok(s.clone()),
            ArgumentValue::VariableRef(name) => store
                .get(name)
                .map(str::to_string)
                .ok_or_else(|| ExecError::Unbound(name.clone())),
        })
        .collect()
}

/// Instantiates the executor template for one step. The document is inlined
/// once through `{document}`; CTX arguments point back to it.
pub fn build_step_prompt(
    step: &PlanStep,
    store: &VariableStore,
    doc: &Document,
    snapshot: &ActionRegistry,
    prompts: &PromptSet,
) -> Result<String, ExecError> {
    let resolved = resolve_arguments(step, store, doc)?;
    let signature = snapshot.get(&step.action);
    let description = signature.map(|s| s.description.as_str()).unwrap_or("");
    let params = signature.map(|s| s.params.as_slice()).unwrap_or(&[]);
    let arguments = step
        .arguments
        .iter()
        .zip(&resolved)
        .enumerate()
        .map(|(i, (arg, value))| {
            let label = params
                .get(i)
                .filter(|p| p.as_str() != "...")
                .cloned()
                .unwrap_or_else(|| format!("arg{}", i + 1));
            match arg {
                ArgumentValue::ContextRef => format!("- {label}: the article above"),
                _ => format!("- {label}: {value}"),
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(prompts.render(
        TemplateKind::Executor,
        &[
            ("document", &doc.text),
            ("action", &step.action),
            ("description", description),
            ("explanation", step.explanation.as_deref().unwrap_or("")),
            ("arguments", &arguments),
        ],
    ))
}

pub struct PlanExecutor<'a> {
    pub generator: &'a dyn Generator,
    pub prompts: &'a PromptSet,
}

impl<'a> PlanExecutor<'a> {
    pub fn new(generator: &'a dyn Generator, prompts: &'a PromptSet) -> Self {
        Self { generator, prompts }
    }

    pub fn execute(
        &self,
        plan: &Plan,
        snapshot: &ActionRegistry,
        doc: &Document,
    ) -> Result<ExecutionResult, ExecutionFailure> {
        let mut store = VariableStore::default();
        let mut evidence = Vec::with_capacity(plan.steps.len());
        for step in &plan.steps {
            match self.run_step(step, &store, snapshot, doc) {
                Ok(record) => {
                    let bound = store.bind(&step.output, record.output.clone());
                    evidence.push(record);
                    if let Err(error) = bound {
                        return Err(ExecutionFailure {
                            step_index: step.index,
                            evidence,
                            error,
                            context_overflow: false,
                        });
                    }
                }
                Err(error) => {
                    let context_overflow =
                        matches!(&error, ExecError::Gateway(g) if g.is_context_overflow());
                    return Err(ExecutionFailure {
                        step_index: step.index,
                        evidence,
                        error,
                        context_overflow,
                    });
                }
            }
        }
        match evidence.last() {
            Some(last) => Ok(ExecutionResult {
                final_answer: last.output.clone(),
                evidence,
            }),
            None => Err(ExecutionFailure {
                step_index: 0,
                evidence,
                error: ExecError::EmptyPlan,
                context_overflow: false,
            }),
        }
    }

    fn run_step(
        &self,
        step: &PlanStep,
        store: &VariableStore,
        snapshot: &ActionRegistry,
        doc: &Document,
    ) -> Result<EvidenceRecord, ExecError> {
        if step.action == CONCAT_ACTION {
            let resolved = resolve_arguments(step, store, doc)?;
            let output = step
                .arguments
                .iter()
                .zip(&resolved)
                .map(|(arg, value)| match arg {
                    ArgumentValue::ContextRef => doc.text.as_str(),
                    _ => value.as_str(),
                })
                .collect::<Vec<_>>()
                .join("\n");
            return Ok(EvidenceRecord {
                step_index: step.index,
                action: step.action.clone(),
                output_name: step.output.clone(),
                resolved_arguments: resolved,
                output,
                model_free: true,
                usage: Usage::default(),
                latency_ms: 0,
            });
        }
        let prompt = build_step_prompt(step, store, doc, snapshot, self.prompts)?;
        let resolved = resolve_arguments(step, store, doc)?;
        let result = self
            .generator
            .generate(&GenerationRequest::new(Role::Executor, prompt))?;
        Ok(EvidenceRecord {
            step_index: step.index,
            action: step.action.clone(),
            output_name: step.output.clone(),
            resolved_arguments: resolved,
            output: result.text,
            model_free: false,
            usage: result.usage,
            latency_ms: result.latency_ms,
        })
    }
}
