//! Inputs shared by the benchmarks.

use pitfall_core::{ActionRegistry, Plan};

/// A plan with `steps` chained steps, declarations and literals.
pub fn plan_text(steps: usize) -> String {
    let mut text = String::from(
        "[Strategy Reasoning]\nGather the events first, then relate them.\n\n[Answer]\nNew actions:\n\
         - RANK(CTX, X) : Rank the items in X\n\n",
    );
    text.push_str("1. v1 = FIND_ALL_ISSUES(CTX, \"key events\", \"the colony\") : Find events\n");
    for i in 2..=steps {
        let action = match i % 4 {
            0 => format!("RANK(CTX, v{})", i - 1),
            1 => format!("COMPARE(CTX, v{}, \"earlier, later\")", i - 1),
            2 => format!("SUMMARIZE(CTX, v{})", i - 1),
            _ => format!("CONCAT(v{}, v1, \"note {i}\")", i - 1),
        };
        text.push_str(&format!("{i}. v{i} = {action} : Step {i}\n"));
    }
    text
}

pub fn parsed_plan(steps: usize) -> Plan {
    pitfall_core::parse_plan(&plan_text(steps)).expect("benchmark plan parses")
}

pub fn registry() -> ActionRegistry {
    ActionRegistry::builtin()
}

/// Whitespace text of `words` tokens drawn from a small vocabulary.
pub fn document(words: usize) -> String {
    const VOCAB: [&str; 8] = ["harbor", "mill", "snow", "letter", "the", "pass", "aunt", "boats"];
    (0..words).map(|i| VOCAB[(i * 7 + i / 3) % VOCAB.len()]).collect::<Vec<_>>().join(" ")
}
