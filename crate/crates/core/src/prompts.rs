//! Prompt templates and `{placeholder}` substitution.

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TemplateKind {
    Predictor,
    Planner,
    VanillaPlanner,
    Corrector,
    Executor,
    Gqa,
    Cot,
    PlanAndSolve,
    Judge,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 9] = [
        TemplateKind::Predictor,
        TemplateKind::Planner,
        TemplateKind::VanillaPlanner,
        TemplateKind::Corrector,
        TemplateKind::Executor,
        TemplateKind::Gqa,
        TemplateKind::Cot,
        TemplateKind::PlanAndSolve,
        TemplateKind::Judge,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::Predictor => "predictor.txt",
            TemplateKind::Planner => "planner.txt",
            TemplateKind::VanillaPlanner => "vanilla_planner.txt",
            TemplateKind::Corrector => "corrector.txt",
            TemplateKind::Executor => "executor.txt",
            TemplateKind::Gqa => "gqa.txt",
            TemplateKind::Cot => "cot.txt",
            TemplateKind::PlanAndSolve => "plan_and_solve.txt",
            TemplateKind::Judge => "judge.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateKind::Predictor => include_str!("../templates/predictor.txt"),
            TemplateKind::Planner => include_str!("../templates/planner.txt"),
            TemplateKind::VanillaPlanner => include_str!("../templates/vanilla_planner.txt"),
            TemplateKind::Corrector => include_str!("../templates/corrector.txt"),
            TemplateKind::Executor => include_str!("../templates/executor.txt"),
            TemplateKind::Gqa => include_str!("../templates/gqa.txt"),
            TemplateKind::Cot => include_str!("../templates/cot.txt"),
            TemplateKind::PlanAndSolve => include_str!("../templates/plan_and_solve.txt"),
            TemplateKind::Judge => include_str!("../templates/judge.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<TemplateKind, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            templates: TemplateKind::ALL
                .iter()
                .map(|&k| (k, k.builtin().to_string()))
                .collect(),
        }
    }

    /// Builtins, with any `<name>.txt` found in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::builtin();
        for kind in TemplateKind::ALL {
            let path = dir.join(kind.file_name());
            if path.is_file() {
                set.templates.insert(kind, std::fs::read_to_string(&path)?);
            }
        }
        Ok(set)
    }

    pub fn set(&mut self, kind: TemplateKind, text: impl Into<String>) {
        self.templates.insert(kind, text.into());
    }

    pub fn get(&self, kind: TemplateKind) -> &str {
        &self.templates[&kind]
    }

    pub fn render(&self, kind: TemplateKind, vars: &[(&str, &str)]) -> String {
        render(self.get(kind), vars)
    }
}

/// Replaces `{name}` for every `name` in `vars`, in a single left-to-right
/// pass: substituted text is never rescanned, and braces that do not form a
/// known placeholder (JSON in few-shot examples) are left untouched.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Bullet list of pitfalls; `- None identified` when there are none.
pub fn render_pitfalls(constraints: &[String]) -> String {
    if constraints.is_empty() {
        return "- None identified".to_string();
    }
    constraints
        .iter()
        .map(|c| format!("- {c}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn option_letter(index: usize) -> char {
    (b'A' + (index % 26) as u8) as char
}

/// `A. first\nB. second ...`
pub fn render_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {o}", option_letter(i)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rewrites the four-option judge wording for other option counts.
pub fn adapt_judge_template(template: &str, option_count: usize) -> String {
    if option_count == 4 {
        return template.to_string();
    }
    let letters: Vec<String> = (0..option_count).map(|i| option_letter(i).to_string()).collect();
    let listed = match letters.len() {
        0 => String::new(),
        1 => letters[0].clone(),
        2 => format!("{} and {}", letters[0], letters[1]),
        n => format!("{}, and {}", letters[..n - 1].join(", "), letters[n - 1]),
    };
    template
        .replace(
            "all four options (A, B, C, and D)",
            &format!("all {} options ({listed})", number_word(option_count)),
        )
        .replace(
            "Answer (select from A, B, C, D):",
            &format!("Answer (select from {}):", letters.join(", ")),
        )
}

fn number_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_single_pass_and_keeps_json_braces() {
        let out = render(
            "{\"k\": [\"{question}\"]} {a}{b} {missing}",
            &[("question", "Q {a}"), ("a", "1"), ("b", "2")],
        );
        assert_eq!(out, "{\"k\": [\"Q {a}\"]} 12 {missing}");
    }

    #[test]
    fn unbalanced_braces_are_literal() {
        assert_eq!(render("{ {x", &[("x", "y")]), "{ {x");
        assert_eq!(render("}{x}", &[("x", "y")]), "}y");
    }

    #[test]
    fn builtin_templates_have_their_slots() {
        let set = PromptSet::builtin();
        assert!(set.get(TemplateKind::Predictor).contains("{question}"));
        assert!(set.get(TemplateKind::Predictor).contains("\"assumption_pitfalls\""));
        for slot in ["{action_list}", "{question}", "{assumption_pitfall}"] {
            assert!(set.get(TemplateKind::Planner).contains(slot), "{slot}");
        }
        for slot in ["{action_list}", "{question}", "{invalid_plan}", "{error_message}", "{assumption_pitfall}"] {
            assert!(set.get(TemplateKind::Corrector).contains(slot), "{slot}");
        }
        assert!(!set.get(TemplateKind::VanillaPlanner).contains("{assumption_pitfall}"));
        assert!(!set.get(TemplateKind::VanillaPlanner).contains("Strategy Reasoning"));
        assert!(set.get(TemplateKind::Gqa).contains("(Please provide a detailed explanation for answering the question above.)"));
        assert!(set.get(TemplateKind::Cot).contains("Please think step by step to find the answer based on the article."));
        assert!(set.get(TemplateKind::PlanAndSolve).contains("devise a plan to solve it"));
        for slot in ["{document}", "{action}", "{description}", "{arguments}"] {
            assert!(set.get(TemplateKind::Executor).contains(slot), "{slot}");
        }
        assert!(set.get(TemplateKind::Judge).contains("Answer (select from A, B, C, D):"));
    }

    #[test]
    fn pitfall_rendering() {
        assert_eq!(render_pitfalls(&[]), "- None identified");
        assert_eq!(render_pitfalls(&["a".into(), "b".into()]), "- a\n- b");
    }

    #[test]
    fn judge_template_generalizes() {
        let set = PromptSet::builtin();
        let four = adapt_judge_template(set.get(TemplateKind::Judge), 4);
        assert_eq!(four, set.get(TemplateKind::Judge));
        let two = adapt_judge_template(set.get(TemplateKind::Judge), 2);
        assert!(two.contains("all two options (A and B)"));
        assert!(two.contains("Answer (select from A, B):"));
        let five = adapt_judge_template(set.get(TemplateKind::Judge), 5);
        assert!(five.contains("all five options (A, B, C, D, and E)"));
        assert_eq!(render_options(&["x".into(), "y".into()]), "A. x\nB. y");
    }

    #[test]
    fn overrides_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cot.txt"), "custom {question}").unwrap();
        let set = PromptSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.get(TemplateKind::Cot), "custom {question}");
        assert_eq!(set.get(TemplateKind::Gqa), PromptSet::builtin().get(TemplateKind::Gqa));
    }
}
