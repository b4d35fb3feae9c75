//! Pitfall prediction, constraint-aware planning and the bounded correction
//! loop.
//!
//! ```text
//! predict_pitfalls -> generate_plan (t = 0) -> validate
//!                          ^                     |
//!                          +-- correct_plan <----+  invalid and t < budget
//! ```

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dsl::{parse_plan, ParseFailure, Plan};
use crate::gateway::{GatewayError, GenerationRequest, Generator, Role};
use crate::prompts::{render_pitfalls, PromptSet, TemplateKind};
use crate::registry::{
    check_plan, merge_declarations, ActionRegistry, Validation, ValidationError, ValidationFeedback,
};
use crate::sha256_hex;

pub const DEFAULT_BUDGET: u32 = 7;
pub const DEFAULT_MAX_CONSTRAINTS: usize = 3;

const PITFALLS_KEY: &str = "assumption_pitfalls";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub document_ref: String,
    /// Gold answer texts; several annotators may disagree.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold: Vec<String>,
    /// 0-based index into `options` of the correct choice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_option: Option<usize>,
}

impl Query {
    pub fn check(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err(format!("query {}: empty question", self.id));
        }
        if let Some(options) = &self.options {
            if options.len() < 2 {
                return Err(format!("query {}: fewer than two options", self.id));
            }
            if let Some(i) = self.gold_option {
                if i >= options.len() {
                    return Err(format!("query {}: gold option {i} out of range", self.id));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerMode {
    /// Strategy reasoning conditioned on negative constraints.
    #[default]
    ConstraintAware,
    /// Plain planner without constraints or strategy reasoning.
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Maximum number of corrector calls per query.
    pub budget: u32,
    pub max_constraints: usize,
    pub template_set: String,
    pub registry_ref: String,
    pub use_predictor: bool,
    pub planner: PlannerMode,
    pub use_corrector: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            max_constraints: DEFAULT_MAX_CONSTRAINTS,
            template_set: "builtin".into(),
            registry_ref: "builtin".into(),
            use_predictor: true,
            planner: PlannerMode::ConstraintAware,
            use_corrector: true,
        }
    }
}

impl PipelineConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.max_constraints == 0 {
            return Err("max_constraints must be at least 1".into());
        }
        Ok(())
    }

    pub fn effective_budget(&self) -> u32 {
        if self.use_corrector {
            self.budget
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeConstraintSet {
    pub constraints: Vec<String>,
    pub raw_output: String,
    /// Set when no constraint could be extracted; the pipeline still runs.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl NegativeConstraintSet {
    pub fn empty() -> Self {
        Self {
            constraints: Vec::new(),
            raw_output: String::new(),
            degraded: false,
            note: None,
        }
    }
}

/// Extracts the `assumption_pitfalls` list from predictor output.
///
/// Tries the text as JSON first, then once more on its outermost `{...}`
/// span. Keeps at most `max_constraints` nonempty strings.
pub fn parse_constraints(raw: &str, max_constraints: usize) -> NegativeConstraintSet {
    let degraded = |note: String| NegativeConstraintSet {
        constraints: Vec::new(),
        raw_output: raw.to_string(),
        degraded: true,
        note: Some(note),
    };
    let value = match serde_json::from_str::<Value>(raw.trim()).ok().or_else(|| repair_json(raw)) {
        Some(v) => v,
        None => return degraded("constraint-extraction-failed: predictor output is not JSON".into()),
    };
    let Some(items) = value.get(PITFALLS_KEY).and_then(Value::as_array) else {
        return degraded(format!("constraint-extraction-failed: no {PITFALLS_KEY} list"));
    };
    let constraints: Vec<String> = items
        .iter()
        .filter_map(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .take(max_constraints)
        .map(str::to_string)
        .collect();
    if constraints.is_empty() {
        return degraded(format!("constraint-extraction-failed: empty {PITFALLS_KEY} list"));
    }
    NegativeConstraintSet {
        constraints,
        raw_output: raw.to_string(),
        degraded: false,
        note: None,
    }
}

fn repair_json(raw: &str) -> Option<Value> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    if end <= start {
        return None;
    }
    // The few-shot examples open the key with a typographic quote; models copy it.
    let span = raw[start..=end].replace("\u{201c}assumption_pitfalls\"", "\"assumption_pitfalls\"");
    serde_json::from_str(&span).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Producer {
    Planner,
    Corrector,
}

/// One plan attempt `P(t)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRevision {
    pub t: u32,
    pub producer: Producer,
    pub prompt_sha256: String,
    pub raw_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Plan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_failure: Option<ParseFailure>,
    /// Feedback from revision `t - 1` that this revision was asked to fix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_feedback: Option<ValidationFeedback>,
}

impl PlanRevision {
    fn from_output(
        t: u32,
        producer: Producer,
        prompt: &str,
        raw_output: String,
        input_feedback: Option<ValidationFeedback>,
    ) -> Self {
        let (plan, parse_failure) = match parse_plan(&raw_output) {
            Ok(plan) => (Some(plan), None),
            Err(failure) => (None, Some(failure)),
        };
        Self {
            t,
            producer,
            prompt_sha256: sha256_hex(prompt),
            raw_output,
            plan,
            parse_failure,
            input_feedback,
        }
    }
}

/// A plan that passed validation, with the snapshot it was validated against.
#[derive(Debug, Clone)]
pub struct FinalPlan {
    pub plan: Plan,
    pub revision: u32,
    pub snapshot: ActionRegistry,
}

#[derive(Debug, Clone)]
pub enum PlanningOutcome {
    Planned(FinalPlan),
    /// Budget spent; carries the feedback of the last revision.
    BudgetExhausted(ValidationFeedback),
    GatewayFailed {
        role: Role,
        /// Revision being produced when the call failed; `None` for the predictor.
        revision: Option<u32>,
        error: GatewayError,
    },
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub constraints: Option<NegativeConstraintSet>,
    pub revisions: Vec<PlanRevision>,
    /// Validation result of each revision, aligned with `revisions`.
    pub validations: Vec<Vec<ValidationError>>,
    pub corrector_calls: u32,
    pub outcome: PlanningOutcome,
}

impl PipelineRun {
    pub fn final_plan(&self) -> Option<&FinalPlan> {
        match &self.outcome {
            PlanningOutcome::Planned(fp) => Some(fp),
            _ => None,
        }
    }
}

pub struct PlanningPipeline<'a> {
    pub generator: &'a dyn Generator,
    pub registry: &'a ActionRegistry,
    pub prompts: &'a PromptSet,
    pub config: &'a PipelineConfig,
}

impl<'a> PlanningPipeline<'a> {
    pub fn new(
        generator: &'a dyn Generator,
        registry: &'a ActionRegistry,
        prompts: &'a PromptSet,
        config: &'a PipelineConfig,
    ) -> Self {
        Self {
            generator,
            registry,
            prompts,
            config,
        }
    }

    pub fn predictor_prompt(&self, query: &Query) -> String {
        self.prompts
            .render(TemplateKind::Predictor, &[("question", &query.question)])
    }

    pub fn predict_pitfalls(&self, query: &Query) -> Result<NegativeConstraintSet, GatewayError> {
        let request = GenerationRequest::new(Role::Predictor, self.predictor_prompt(query));
        let output = self.generator.generate(&request)?;
        let set = parse_constraints(&output.text, self.config.max_constraints);
        if let Some(note) = &set.note {
            log::warn!("query {}: {note}", query.id);
        }
        Ok(set)
    }

    pub fn planner_prompt(&self, query: &Query, constraints: &NegativeConstraintSet) -> String {
        let actions = self.registry.render_action_list();
        match self.config.planner {
            PlannerMode::ConstraintAware => self.prompts.render(
                TemplateKind::Planner,
                &[
                    ("action_list", &actions),
                    ("question", &query.question),
                    ("assumption_pitfall", &render_pitfalls(&constraints.constraints)),
                ],
            ),
            PlannerMode::Vanilla => self.prompts.render(
                TemplateKind::VanillaPlanner,
                &[("action_list", &actions), ("question", &query.question)],
            ),
        }
    }

    /// Produces `P(0)`. No validation happens here.
    pub fn generate_plan(
        &self,
        query: &Query,
        constraints: &NegativeConstraintSet,
    ) -> Result<PlanRevision, GatewayError> {
        let prompt = self.planner_prompt(query, constraints);
        let output = self
            .generator
            .generate(&GenerationRequest::new(Role::Planner, prompt.clone()))?;
        Ok(PlanRevision::from_output(0, Producer::Planner, &prompt, output.text, None))
    }

    pub fn corrector_prompt(
        &self,
        query: &Query,
        constraints: &NegativeConstraintSet,
        feedback: &ValidationFeedback,
    ) -> String {
        self.prompts.render(
            TemplateKind::Corrector,
            &[
                ("action_list", &self.registry.render_action_list()),
                ("question", &query.question),
                ("invalid_plan", &feedback.invalid_plan_text),
                ("error_message", &feedback.error_message()),
                ("assumption_pitfall", &render_pitfalls(&constraints.constraints)),
            ],
        )
    }

    /// Produces `P(t)` from the feedback on `P(t-1)` only.
    pub fn correct_plan(
        &self,
        query: &Query,
        constraints: &NegativeConstraintSet,
        feedback: &ValidationFeedback,
        t: u32,
    ) -> Result<PlanRevision, GatewayError> {
        let prompt = self.corrector_prompt(query, constraints, feedback);
        let output = self
            .generator
            .generate(&GenerationRequest::new(Role::Corrector, prompt.clone()))?;
        Ok(PlanRevision::from_output(
            t,
            Producer::Corrector,
            &prompt,
            output.text,
            Some(feedback.clone()),
        ))
    }

    /// Validates a revision; parse failures become a single whole-plan error.
    pub fn check_revision(&self, revision: &PlanRevision) -> (Validation, Option<ActionRegistry>) {
        match (&revision.plan, &revision.parse_failure) {
            (Some(plan), _) => {
                let merged = merge_declarations(self.registry, &plan.new_actions);
                for w in &merged.warnings {
                    log::warn!("revision {}: {w}", revision.t);
                }
                let errors = check_plan(plan, &merged.snapshot);
                if errors.is_empty() {
                    (Validation::Valid, Some(merged.snapshot))
                } else {
                    let fb = ValidationFeedback {
                        invalid_plan_text: plan.body_text(),
                        errors,
                    };
                    (Validation::Invalid(fb), None)
                }
            }
            (None, failure) => {
                let message = failure
                    .clone()
                    .unwrap_or(ParseFailure::NoStepsFound)
                    .to_string();
                let fb = ValidationFeedback {
                    invalid_plan_text: answer_region(&revision.raw_output).to_string(),
                    errors: vec![ValidationError::unparseable(message)],
                };
                (Validation::Invalid(fb), None)
            }
        }
    }

    pub fn run(&self, query: &Query) -> PipelineRun {
        let mut run = PipelineRun {
            constraints: None,
            revisions: Vec::new(),
            validations: Vec::new(),
            corrector_calls: 0,
            outcome: PlanningOutcome::BudgetExhausted(ValidationFeedback {
                invalid_plan_text: String::new(),
                errors: Vec::new(),
            }),
        };

        let constraints = if self.config.use_predictor {
            match self.predict_pitfalls(query) {
                Ok(set) => set,
                Err(error) => {
                    run.outcome = PlanningOutcome::GatewayFailed {
                        role: Role::Predictor,
                        revision: None,
                        error,
                    };
                    return run;
                }
            }
        } else {
            NegativeConstraintSet::empty()
        };
        run.constraints = Some(constraints.clone());

        let mut revision = match self.generate_plan(query, &constraints) {
            Ok(r) => r,
            Err(error) => {
                run.outcome = PlanningOutcome::GatewayFailed {
                    role: Role::Planner,
                    revision: Some(0),
                    error,
                };
                return run;
            }
        };

        let budget = self.config.effective_budget();
        loop {
            let t = revision.t;
            let (validation, snapshot) = self.check_revision(&revision);
            let errors = match &validation {
                Validation::Valid => Vec::new(),
                Validation::Invalid(fb) => fb.errors.clone(),
            };
            run.validations.push(errors);
            let plan = revision.plan.clone();
            run.revisions.push(revision);

            let feedback = match validation {
                Validation::Valid => {
                    run.outcome = PlanningOutcome::Planned(FinalPlan {
                        plan: plan.expect("valid revision has a plan"),
                        revision: t,
                        snapshot: snapshot.expect("valid revision has a snapshot"),
                    });
                    return run;
                }
                Validation::Invalid(fb) => fb,
            };
            if t >= budget {
                run.outcome = PlanningOutcome::BudgetExhausted(feedback);
                return run;
            }
            run.corrector_calls += 1;
            revision = match self.correct_plan(query, &constraints, &feedback, t + 1) {
                Ok(r) => r,
                Err(error) => {
                    run.outcome = PlanningOutcome::GatewayFailed {
                        role: Role::Corrector,
                        revision: Some(t + 1),
                        error,
                    };
                    return run;
                }
            };
        }
    }
}

/// Text after the last `[Answer]` header, or the whole text.
fn answer_region(raw: &str) -> &str {
    match raw.rfind("[Answer]") {
        Some(pos) => raw[pos + "[Answer]".len()..].trim(),
        None => raw.trim(),
    }
}
