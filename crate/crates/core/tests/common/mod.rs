//! Helpers shared by the integration tests: fixture loading, reference
//! oracles and random input generators.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use pitfall_core::corpus::read_native;
use pitfall_core::metrics::OverlapStubScorer;
use pitfall_core::runner::{run, RunContext, RunOutcome};
use pitfall_core::{
    ActionRegistry, ActionSignature, Arity, ArgumentValue, Gateway, Plan, PlanStep, PromptSet, RunConfig,
    ScriptedBackend, ValidationErrorKind, WhitespaceTokenizer,
};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// All plan fixtures as `(file name, text)`, sorted by name.
pub fn plan_fixtures() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(fixtures_dir().join("plans"))
        .expect("plan fixture dir")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixtures_dir().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Runs the bundled chronology scenario and returns the trace bytes.
pub fn run_chronology() -> (Vec<u8>, RunOutcome) {
    let dir = fixtures_dir().join("chronology");
    let config = RunConfig::from_path(&dir.join("config.json")).unwrap();
    let script = dir.join(config.backend.script.as_ref().unwrap());
    let backend = Gateway::new(ScriptedBackend::from_path(&script).unwrap());
    let records = read_native(&dir.join("corpus.jsonl")).unwrap().records;
    let registry = ActionRegistry::builtin();
    let prompts = PromptSet::builtin();
    let scorer = OverlapStubScorer;
    let ctx = RunContext {
        config: &config,
        registry: &registry,
        prompts: &prompts,
        generator: &backend,
        judge: &backend,
        scorer: Some(&scorer),
        tokenizer: &WhitespaceTokenizer,
    };
    let mut trace = Vec::new();
    let outcome = run(&ctx, &records, &mut trace).unwrap();
    (trace, outcome)
}

pub fn golden_trace_path() -> PathBuf {
    fixtures_dir().join("chronology").join("golden_trace.jsonl")
}

/// Set `UPDATE_GOLDEN=1` to rewrite golden files instead of comparing.
pub fn updating_golden() -> bool {
    std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1")
}

// ---------------------------------------------------------------------------
// Validator reference

/// Straightforward re-statement of the validation rules, used as an oracle.
/// Returns the error kinds of every step, sorted.
pub fn reference_error_kinds(plan: &Plan, registry: &[(String, Arity)]) -> Vec<ValidationErrorKind> {
    // Effective signature table: registry entries, then the first declaration
    // of each name unless the registry entry already accepts its arity.
    let mut table: Vec<(String, Arity)> = registry.to_vec();
    let mut declared = Vec::<&str>::new();
    for decl in &plan.new_actions {
        if declared.contains(&decl.name.as_str()) {
            continue;
        }
        declared.push(&decl.name);
        let n = decl.parameters.len();
        let pos = table.iter().position(|(name, _)| *name == decl.name);
        match pos {
            Some(i) if accepts(table[i].1, n) && registry.iter().any(|(r, _)| *r == decl.name) => {}
            Some(i) => table[i].1 = Arity::Exact(n),
            None => table.push((decl.name.clone(), Arity::Exact(n))),
        }
    }

    let mut kinds = Vec::new();
    for (i, step) in plan.steps.iter().enumerate() {
        match table.iter().find(|(name, _)| *name == step.action) {
            None => kinds.push(ValidationErrorKind::UnknownAction),
            Some((_, arity)) if !accepts(*arity, step.arguments.len()) => kinds.push(ValidationErrorKind::ArityMismatch),
            _ => {}
        }
        let earlier: Vec<&str> = plan.steps[..i].iter().map(|s| s.output.as_str()).collect();
        for arg in &step.arguments {
            if let ArgumentValue::VariableRef(v) = arg {
                if v != "CTX" && !earlier.contains(&v.as_str()) {
                    kinds.push(ValidationErrorKind::UndefinedVariable);
                }
            }
        }
        if earlier.contains(&step.output.as_str()) {
            kinds.push(ValidationErrorKind::DuplicateOutput);
        }
    }
    kinds.sort();
    kinds
}

fn accepts(arity: Arity, n: usize) -> bool {
    match arity {
        Arity::Exact(k) => n == k,
        Arity::AtLeast(k) => n >= k,
    }
}

const ACTION_POOL: [&str; 12] = [
    "FIND", "SUMMARIZE", "COMPARE", "INFER", "CONCAT", "LIST_ITEMS", "EVALUATE", "RANK", "TRANSLATE",
    "FIND_ELEMENT", "COUNT_X", "EXPLAIN",
];
const VAR_POOL: [&str; 8] = ["a", "b", "c", "d", "ans", "info", "x1", "tmp"];

pub fn random_registry(rng: &mut impl Rng) -> Vec<(String, Arity)> {
    let mut names: Vec<&str> = ACTION_POOL.to_vec();
    names.shuffle(rng);
    let count = rng.gen_range(3..=ACTION_POOL.len());
    names[..count]
        .iter()
        .map(|n| {
            let arity = if rng.gen_bool(0.15) {
                Arity::AtLeast(rng.gen_range(1..=3))
            } else {
                Arity::Exact(rng.gen_range(1..=4))
            };
            (n.to_string(), arity)
        })
        .collect()
}

pub fn to_registry(entries: &[(String, Arity)]) -> ActionRegistry {
    let mut reg = ActionRegistry::from_json("[]").unwrap();
    for (name, arity) in entries {
        reg.insert(ActionSignature {
            name: name.clone(),
            arity: *arity,
            description: format!("Does {name}"),
            params: Vec::new(),
            origin: pitfall_core::registry::Origin::Builtin,
        });
    }
    reg
}

/// A random plan over the action pool; roughly half come out valid.
pub fn random_plan(rng: &mut impl Rng, registry: &[(String, Arity)]) -> Plan {
    let clean = rng.gen_bool(0.5);
    let mut new_actions = Vec::new();
    if rng.gen_bool(0.3) {
        for _ in 0..rng.gen_range(1..=2) {
            let name = ACTION_POOL.choose(rng).unwrap().to_string();
            let n = rng.gen_range(1..=3);
            let params = std::iter::once("CTX".to_string())
                .chain(["X", "Y", "Z"].iter().take(n - 1).map(|s| s.to_string()))
                .collect();
            new_actions.push(pitfall_core::ActionDeclaration {
                name,
                parameters: params,
                description: "declared".into(),
            });
        }
    }
    let mut steps: Vec<PlanStep> = Vec::new();
    let mut used: HashSet<String> = HashSet::new();
    let known: HashMap<&str, Arity> = registry.iter().map(|(n, a)| (n.as_str(), *a)).collect();
    for index in 1..=rng.gen_range(1..=6) {
        let (action, arity) = if clean || rng.gen_bool(0.7) {
            let (n, a) = registry.choose(rng).unwrap();
            (n.clone(), *a)
        } else {
            let n = ACTION_POOL.choose(rng).unwrap();
            (n.to_string(), known.get(n).copied().unwrap_or(Arity::Exact(2)))
        };
        let mut argc = match arity {
            Arity::Exact(k) => k,
            Arity::AtLeast(k) => k + rng.gen_range(0..=2),
        };
        if !clean && rng.gen_bool(0.15) {
            argc = if argc > 1 && rng.gen_bool(0.5) { argc - 1 } else { argc + 1 };
        }
        let defined: Vec<&String> = steps.iter().map(|s| &s.output).collect();
        let arguments = (0..argc)
            .map(|j| {
                if j == 0 && rng.gen_bool(0.7) {
                    return ArgumentValue::ContextRef;
                }
                match rng.gen_range(0..3) {
                    0 => ArgumentValue::StringLiteral(format!("lit {index} {j}")),
                    1 if !defined.is_empty() && (clean || rng.gen_bool(0.8)) => {
                        ArgumentValue::VariableRef(defined.choose(rng).unwrap().to_string())
                    }
                    1 if !clean => ArgumentValue::VariableRef(VAR_POOL.choose(rng).unwrap().to_string()),
                    _ => ArgumentValue::ContextRef,
                }
            })
            .collect();
        let output = if clean || rng.gen_bool(0.85) {
            let fresh = VAR_POOL.iter().find(|v| !used.contains(**v)).copied();
            match fresh {
                Some(v) => v.to_string(),
                None => format!("v{index}"),
            }
        } else {
            VAR_POOL.choose(rng).unwrap().to_string()
        };
        used.insert(output.clone());
        steps.push(PlanStep {
            index,
            output,
            action,
            arguments,
            explanation: rng.gen_bool(0.5).then(|| format!("step {index}")),
        });
    }
    Plan {
        strategy_reasoning: None,
        new_actions,
        steps,
        raw_text: String::new(),
        warnings: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Recall reference

/// Multiset overlap computed by counting characters into words by hand.
pub fn reference_recall(prediction: &str, gold: &str) -> Option<f64> {
    fn words(s: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for ch in s.chars() {
            if ch.is_whitespace() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            } else if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }
    let g = words(gold);
    if g.is_empty() {
        return None;
    }
    let mut pool = words(prediction);
    let mut hits = 0usize;
    for w in &g {
        if let Some(i) = pool.iter().position(|p| p == w) {
            pool.swap_remove(i);
            hits += 1;
        }
    }
    Some(hits as f64 / g.len() as f64)
}

pub fn random_text(rng: &mut impl Rng, max_words: usize) -> String {
    const WORDS: [&str; 14] = [
        "the", "The", "ship", "ship,", "Harbor", "harbor.", "snow", "it's", "its", "MILL", "mill!", "a", "don't", "42",
    ];
    let n = rng.gen_range(0..=max_words);
    let seps = [" ", "  ", "\n", "\t"];
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push_str(seps.choose(rng).unwrap());
        }
        out.push_str(WORDS.choose(rng).unwrap());
    }
    out
}
