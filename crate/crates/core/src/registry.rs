//! Action space and the syntactic plan validator.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dsl::{ActionDeclaration, ArgumentValue, Plan, CONTEXT_ARG};

const BUILTIN_ACTIONS: &str = include_str!("../data/actions.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(self, count: usize) -> bool {
        match self {
            Arity::Exact(n) => count == n,
            Arity::AtLeast(min) => count >= min,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exact(n) => write!(f, "{n}"),
            Arity::AtLeast(min) => write!(f, "variadic:{min}"),
        }
    }
}

impl Serialize for Arity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Arity::Exact(n) => serializer.serialize_u64(*n as u64),
            Arity::AtLeast(_) => serializer.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Arity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;

        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(u64),
            Text(String),
        }
        let arity = match Raw::deserialize(deserializer)? {
            Raw::Number(n) => Arity::Exact(n as usize),
            Raw::Text(s) => {
                let min = s
                    .strip_prefix("variadic:")
                    .and_then(|m| m.trim().parse::<usize>().ok())
                    .ok_or_else(|| D::Error::custom(format!("invalid arity {s:?}")))?;
                Arity::AtLeast(min)
            }
        };
        match arity {
            Arity::Exact(0) | Arity::AtLeast(0) => Err(D::Error::custom("arity must be >= 1")),
            ok => Ok(ok),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Builtin,
    PlanDeclared,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSignature {
    pub name: String,
    pub arity: Arity,
    pub description: String,
    /// Display names for the parameters; only used when listing actions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<String>,
    #[serde(default = "builtin_origin", skip_serializing)]
    pub origin: Origin,
}

fn builtin_origin() -> Origin {
    Origin::Builtin
}

impl ActionSignature {
    fn display_params(&self) -> String {
        if !self.params.is_empty() {
            return self.params.join(", ");
        }
        const NAMES: [&str; 5] = ["X", "Y", "Z", "W", "V"];
        let mut names: Vec<String> = match self.arity {
            Arity::Exact(n) | Arity::AtLeast(n) => (0..n)
                .map(|i| NAMES.get(i).map_or(format!("X{i}"), |s| s.to_string()))
                .collect(),
        };
        if matches!(self.arity, Arity::AtLeast(_)) {
            names.push("...".into());
        }
        names.join(", ")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("failed to read registry file {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid registry JSON")]
    Json(#[from] serde_json::Error),
    #[error("duplicate action {0} in registry")]
    Duplicate(String),
}

/// The action space. Iteration order is insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionRegistry {
    actions: IndexMap<String, ActionSignature>,
}

impl ActionRegistry {
    /// The shipped action space.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_ACTIONS).expect("bundled action registry is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, RegistryError> {
        let entries: Vec<ActionSignature> = serde_json::from_str(json)?;
        let mut registry = Self::default();
        for mut sig in entries {
            sig.origin = Origin::Builtin;
            if registry.actions.contains_key(&sig.name) {
                return Err(RegistryError::Duplicate(sig.name));
            }
            registry.actions.insert(sig.name.clone(), sig);
        }
        Ok(registry)
    }

    pub fn from_path(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<&ActionSignature> = self.actions.values().collect();
        serde_json::to_string_pretty(&entries).expect("registry serializes")
    }

    pub fn insert(&mut self, sig: ActionSignature) -> Option<ActionSignature> {
        self.actions.insert(sig.name.clone(), sig)
    }

    pub fn remove(&mut self, name: &str) -> Option<ActionSignature> {
        self.actions.shift_remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&ActionSignature> {
        self.actions.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.actions.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ActionSignature> {
        self.actions.values()
    }

    /// One `- NAME(params) : description` line per action, as shown to planners.
    pub fn render_action_list(&self) -> String {
        self.actions
            .values()
            .map(|sig| format!("- {}({}) : {}", sig.name, sig.display_params(), sig.description))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Result of merging a plan's declarations into a registry.
#[derive(Debug, Clone)]
pub struct MergedRegistry {
    pub snapshot: ActionRegistry,
    pub warnings: Vec<String>,
}

/// Builds the snapshot a plan is validated and executed against.
///
/// A declaration with the same name and arity as an existing action leaves
/// the existing signature in place; one with a different arity replaces it
/// for this snapshot. Repeated declarations of one name keep the first.
pub fn merge_declarations(registry: &ActionRegistry, decls: &[ActionDeclaration]) -> MergedRegistry {
    let mut snapshot = registry.clone();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for decl in decls {
        if !seen.insert(decl.name.as_str()) {
            warnings.push(format!(
                "action {} declared more than once; keeping the first declaration",
                decl.name
            ));
            continue;
        }
        let arity = Arity::Exact(decl.arity());
        if let Some(existing) = registry.get(&decl.name) {
            if existing.arity.accepts(decl.arity()) {
                continue;
            }
        }
        snapshot.insert(ActionSignature {
            name: decl.name.clone(),
            arity,
            description: decl.description.clone(),
            params: decl.parameters.clone(),
            origin: Origin::PlanDeclared,
        });
    }
    MergedRegistry { snapshot, warnings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationErrorKind {
    UnknownAction,
    UndefinedVariable,
    ArityMismatch,
    DuplicateOutput,
    /// The model output could not be parsed into any plan at all.
    UnparseablePlan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    /// 1-based step index; 0 for whole-plan failures.
    pub step_index: usize,
    pub kind: ValidationErrorKind,
    pub message: String,
}

impl ValidationError {
    pub fn unknown_action(step_index: usize, action: &str) -> Self {
        Self {
            step_index,
            kind: ValidationErrorKind::UnknownAction,
            message: format!(
                "Error parsing action {action}. Unknown action. Please define it in the 'New actions' section if needed, or choose from the existing action list."
            ),
        }
    }

    pub fn undefined_variable(step_index: usize, action: &str, argument: &str) -> Self {
        Self {
            step_index,
            kind: ValidationErrorKind::UndefinedVariable,
            message: format!("Error parsing action {action}. Argument {argument} is not defined."),
        }
    }

    pub fn arity_mismatch(step_index: usize, action: &str) -> Self {
        Self {
            step_index,
            kind: ValidationErrorKind::ArityMismatch,
            message: format!("Error parsing action {action}. Number of arguments is incorrect"),
        }
    }

    pub fn duplicate_output(step_index: usize, action: &str, output: &str) -> Self {
        Self {
            step_index,
            kind: ValidationErrorKind::DuplicateOutput,
            message: format!("Error parsing action {action}. Output {output} is already defined."),
        }
    }

    pub fn unparseable(message: String) -> Self {
        Self {
            step_index: 0,
            kind: ValidationErrorKind::UnparseablePlan,
            message,
        }
    }
}

/// The invalid plan of one revision and what was wrong with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationFeedback {
    pub invalid_plan_text: String,
    pub errors: Vec<ValidationError>,
}

impl ValidationFeedback {
    /// All messages, one per line.
    pub fn error_message(&self) -> String {
        self.errors
            .iter()
            .map(|e| e.message.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Valid,
    Invalid(ValidationFeedback),
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validation::Valid)
    }
}

/// Lists every syntactic error in step order.
///
/// Per step the order is: unknown action or arity mismatch, undefined
/// variables in argument order, then a duplicate output name. A step's
/// output counts as defined for later steps even when the step has errors.
pub fn check_plan(plan: &Plan, snapshot: &ActionRegistry) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    let mut defined: HashSet<&str> = HashSet::new();
    for step in &plan.steps {
        match snapshot.get(&step.action) {
            None => errors.push(ValidationError::unknown_action(step.index, &step.action)),
            Some(sig) if !sig.arity.accepts(step.arguments.len()) => {
                errors.push(ValidationError::arity_mismatch(step.index, &step.action))
            }
            Some(_) => {}
        }
        for arg in &step.arguments {
            if let ArgumentValue::VariableRef(name) = arg {
                if name != CONTEXT_ARG && !defined.contains(name.as_str()) {
                    errors.push(ValidationError::undefined_variable(step.index, &step.action, name));
                }
            }
        }
        if !defined.insert(step.output.as_str()) {
            errors.push(ValidationError::duplicate_output(step.index, &step.action, &step.output));
        }
    }
    errors
}

/// Validates `plan` against `registry` merged with the plan's own declarations.
pub fn validate_plan(plan: &Plan, registry: &ActionRegistry) -> Validation {
    let merged = merge_declarations(registry, &plan.new_actions);
    let errors = check_plan(plan, &merged.snapshot);
    if errors.is_empty() {
        Validation::Valid
    } else {
        Validation::Invalid(ValidationFeedback {
            invalid_plan_text: plan.body_text(),
            errors,
        })
    }
}
