//! Plan language: `output = ACTION(args) : explanation` steps, optional
//! `New actions:` declarations, and an optional strategy preamble.
//!
//! Grammar of a step line:
//!
//! ```text
//! step := INT "." IDENT "=" IDENT "(" args ")" [":" TEXT]
//! args := arg ("," arg)*
//! arg  := "CTX" | IDENT | STRING
//! ```
//!
//! The parser is line oriented and tolerant of the prose that models wrap
//! around plans (code fences, headers, commentary). It never panics.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Reserved argument naming the (possibly truncated) document.
pub const CONTEXT_ARG: &str = "CTX";

const ANSWER_HEADER: &str = "[Answer]";
const STRATEGY_HEADER: &str = "[Strategy Reasoning]";
const NEW_ACTIONS_HEADER: &str = "new actions:";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum ArgumentValue {
    ContextRef,
    VariableRef(String),
    StringLiteral(String),
}

impl fmt::Display for ArgumentValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgumentValue::ContextRef => f.write_str(CONTEXT_ARG),
            ArgumentValue::VariableRef(name) => f.write_str(name),
            ArgumentValue::StringLiteral(text) => write!(f, "\"{text}\""),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    /// 1-based position; always contiguous after parsing.
    pub index: usize,
    pub output: String,
    pub action: String,
    pub arguments: Vec<ArgumentValue>,
    pub explanation: Option<String>,
}

impl PlanStep {
    /// Names of variables read by this step, in argument order.
    pub fn variable_refs(&self) -> impl Iterator<Item = &str> {
        self.arguments.iter().filter_map(|arg| match arg {
            ArgumentValue::VariableRef(name) => Some(name.as_str()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDeclaration {
    pub name: String,
    pub parameters: Vec<String>,
    pub description: String,
}

impl ActionDeclaration {
    pub fn arity(&self) -> usize {
        self.parameters.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub strategy_reasoning: Option<String>,
    pub new_actions: Vec<ActionDeclaration>,
    pub steps: Vec<PlanStep>,
    pub raw_text: String,
    /// Non-fatal observations made while parsing (renumbering, skipped
    /// declarations, missing strategy section).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Plan {
    /// Equality ignoring `raw_text` and parser warnings.
    pub fn same_structure(&self, other: &Plan) -> bool {
        self.strategy_reasoning == other.strategy_reasoning
            && self.new_actions == other.new_actions
            && self.steps == other.steps
    }

    /// The plan without its strategy preamble, as shown to the corrector.
    pub fn body_text(&self) -> String {
        print_plan_parts(None, &self.new_actions, &self.steps)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum ParseFailure {
    #[error("Error parsing plan. No valid action steps found.")]
    NoStepsFound,
    #[error("Error parsing plan. Line {line} is not a valid action step: {detail}.")]
    MalformedStep { line: usize, detail: String },
}

/// Parses model output into a [`Plan`].
///
/// When one or more `[Answer]` headers are present, only the text after the
/// last one is scanned for declarations and steps; the text before it
/// (minus a leading `[Strategy Reasoning]` header) becomes the strategy.
pub fn parse_plan(text: &str) -> Result<Plan, ParseFailure> {
    let lines: Vec<&str> = text.lines().collect();
    let mut warnings = Vec::new();

    let answer_at = lines
        .iter()
        .rposition(|l| l.trim_start().starts_with(ANSWER_HEADER));

    let (strategy_reasoning, body_start, first_body_line) = match answer_at {
        Some(pos) => {
            let pre = lines[..pos].join("\n");
            let trimmed = pre.trim_start();
            let stripped = trimmed.strip_prefix(STRATEGY_HEADER).unwrap_or(trimmed);
            let strategy = stripped.trim();
            let strategy = (!strategy.is_empty()).then(|| strategy.to_string());
            let rest = lines[pos].trim_start()[ANSWER_HEADER.len()..].trim();
            (strategy, pos + 1, Some((pos, rest)))
        }
        None => (None, 0, None),
    };
    if strategy_reasoning.is_none() {
        warnings.push("missing [Strategy Reasoning] section".to_string());
    }

    let body = first_body_line
        .into_iter()
        .chain(lines.iter().enumerate().skip(body_start).map(|(i, l)| (i, *l)));

    let mut new_actions: Vec<ActionDeclaration> = Vec::new();
    let mut steps: Vec<PlanStep> = Vec::new();
    let mut in_declarations = false;

    for (idx, raw_line) in body {
        let line_no = idx + 1;
        let line = raw_line.trim().trim_matches('`').trim();
        if line.is_empty() {
            continue;
        }
        if let Some((number, rest)) = split_step_number(line) {
            in_declarations = false;
            let step = parse_step_body(rest)
                .map_err(|detail| ParseFailure::MalformedStep { line: line_no, detail })?;
            let index = steps.len() + 1;
            if number != index {
                warnings.push(format!(
                    "line {line_no}: step numbered {number} renumbered to {index}"
                ));
            }
            steps.push(PlanStep { index, ..step });
            continue;
        }
        if line.to_ascii_lowercase().starts_with(NEW_ACTIONS_HEADER) {
            in_declarations = steps.is_empty();
            continue;
        }
        if in_declarations {
            if let Some(item) = line.strip_prefix('-') {
                let item = item.trim();
                if item.eq_ignore_ascii_case("none") || item.is_empty() {
                    continue;
                }
                match parse_declaration(item) {
                    Ok(decl) => new_actions.push(decl),
                    Err(detail) => {
                        warnings.push(format!("line {line_no}: skipped declaration: {detail}"))
                    }
                }
            }
        }
    }

    if steps.is_empty() {
        return Err(ParseFailure::NoStepsFound);
    }

    Ok(Plan {
        strategy_reasoning,
        new_actions,
        steps,
        raw_text: text.to_string(),
        warnings,
    })
}

/// Canonical rendering. `parse_plan(&print_plan(p))` is structurally equal to `p`.
pub fn print_plan(plan: &Plan) -> String {
    print_plan_parts(
        plan.strategy_reasoning.as_deref(),
        &plan.new_actions,
        &plan.steps,
    )
}

fn print_plan_parts(
    strategy: Option<&str>,
    new_actions: &[ActionDeclaration],
    steps: &[PlanStep],
) -> String {
    let mut out = String::new();
    if let Some(strategy) = strategy {
        out.push_str(STRATEGY_HEADER);
        out.push('\n');
        out.push_str(strategy);
        out.push_str("\n\n");
        out.push_str(ANSWER_HEADER);
        out.push('\n');
    }
    if !new_actions.is_empty() {
        out.push_str("New actions:\n");
        for decl in new_actions {
            out.push_str(&format!("- {}({})", decl.name, decl.parameters.join(", ")));
            if !decl.description.is_empty() {
                out.push_str(" : ");
                out.push_str(&decl.description);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    let rendered: Vec<String> = steps.iter().map(render_step).collect();
    out.push_str(&rendered.join("\n"));
    out
}

fn render_step(step: &PlanStep) -> String {
    let args: Vec<String> = step.arguments.iter().map(ToString::to_string).collect();
    let mut line = format!(
        "{}. {} = {}({})",
        step.index,
        step.output,
        step.action,
        args.join(", ")
    );
    if let Some(explanation) = &step.explanation {
        line.push_str(" : ");
        line.push_str(explanation);
    }
    line
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// `"12. rest"` -> `(12, "rest")`. A digit right after the dot (`3.5`) is
/// not a step number.
fn split_step_number(line: &str) -> Option<(usize, &str)> {
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = line[digits..].strip_prefix('.')?;
    if rest.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    let number = line[..digits].parse().unwrap_or(usize::MAX);
    Some((number, rest.trim_start()))
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Option<&'a str> {
        let rest = self.rest();
        let len = rest
            .char_indices()
            .find(|&(i, c)| {
                !(c.is_ascii_alphanumeric() || c == '_') || (i == 0 && c.is_ascii_digit())
            })
            .map_or(rest.len(), |(i, _)| i);
        if len == 0 {
            return None;
        }
        self.pos += len;
        Some(&rest[..len])
    }
}

fn parse_step_body(src: &str) -> Result<PlanStep, String> {
    let mut cur = Cursor::new(src);
    cur.skip_ws();
    let output = cur.ident().ok_or("expected an output name")?;
    if output == CONTEXT_ARG {
        return Err("CTX cannot be used as an output name".into());
    }
    cur.skip_ws();
    if !cur.eat('=') {
        return Err("missing '='".into());
    }
    cur.skip_ws();
    let action = cur.ident().ok_or("expected an action name after '='")?;
    cur.skip_ws();
    if !cur.eat('(') {
        return Err("missing call parentheses".into());
    }
    let mut arguments = Vec::new();
    loop {
        cur.skip_ws();
        let arg = match cur.peek() {
            Some('"') => {
                cur.eat('"');
                let rest = cur.rest();
                let end = rest.find('"').ok_or("unterminated string literal")?;
                cur.pos += end + 1;
                ArgumentValue::StringLiteral(rest[..end].to_string())
            }
            Some(')') if arguments.is_empty() => return Err("empty argument list".into()),
            Some(_) => {
                let name = cur.ident().ok_or_else(|| {
                    format!("invalid argument starting at {:?}", truncate(cur.rest(), 16))
                })?;
                cur.skip_ws();
                if cur.peek() == Some('(') {
                    return Err("nested calls are not supported".into());
                }
                if name == CONTEXT_ARG {
                    ArgumentValue::ContextRef
                } else {
                    ArgumentValue::VariableRef(name.to_string())
                }
            }
            None => return Err("missing closing parenthesis".into()),
        };
        arguments.push(arg);
        cur.skip_ws();
        if cur.eat(',') {
            continue;
        }
        if cur.eat(')') {
            break;
        }
        return Err(match cur.peek() {
            None => "missing closing parenthesis".into(),
            Some(c) => format!("unexpected {c:?} in argument list"),
        });
    }
    cur.skip_ws();
    let explanation = if cur.rest().is_empty() {
        None
    } else if cur.eat(':') {
        let text = cur.rest().trim();
        (!text.is_empty()).then(|| text.to_string())
    } else {
        return Err(format!(
            "unexpected text after call: {:?}",
            truncate(cur.rest(), 16)
        ));
    };
    Ok(PlanStep {
        index: 0,
        output: output.to_string(),
        action: action.to_string(),
        arguments,
        explanation,
    })
}

/// `NAME(p1, p2) : description` (the colon may touch the parenthesis).
fn parse_declaration(src: &str) -> Result<ActionDeclaration, String> {
    let mut cur = Cursor::new(src);
    let name = cur.ident().ok_or("expected an action name")?;
    cur.skip_ws();
    if !cur.eat('(') {
        return Err(format!("{name}: missing parameter list"));
    }
    let rest = cur.rest();
    let close = rest.find(')').ok_or(format!("{name}: missing ')'"))?;
    let parameters: Vec<String> = rest[..close]
        .split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect();
    if parameters.is_empty() {
        return Err(format!("{name}: declared with no parameters"));
    }
    if let Some(bad) = parameters.iter().find(|p| p.contains(['(', '"'])) {
        return Err(format!("{name}: invalid parameter {bad:?}"));
    }
    cur.pos += close + 1;
    cur.skip_ws();
    cur.eat(':');
    Ok(ActionDeclaration {
        name: name.to_string(),
        parameters,
        description: cur.rest().trim().to_string(),
    })
}

fn truncate(s: &str, max_chars: usize) -> &str {
    match s.char_indices().nth(max_chars) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
