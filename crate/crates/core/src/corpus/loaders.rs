//! Field mappings from public dataset releases to [`CorpusRecord`].
//!
//! | dataset       | source layout                                               |
//! |---------------|-------------------------------------------------------------|
//! | quality       | JSONL, one article per line with a `questions` array         |
//! | conditionalqa | JSON question list plus a separate documents JSON (by url)  |
//! | longreason    | JSONL or JSON list; field names accepted under common aliases |
//! | qasper        | JSON object keyed by paper id, each with `qas`               |
//! | custom        | JSONL `{id, question, options?, document, gold?}`            |

use std::collections::HashMap;
use std::path::Path;

use serde_json::Value;

use super::{CorpusError, CorpusRecord, DatasetId, LoadedCorpus, WhitespaceTokenizer};
use crate::executor::Document;
use crate::pipeline::Query;

/// Mean `untimed_eval2_context` at or above this puts a QuALITY question in the long split.
const QUALITY_LONG_THRESHOLD: f64 = 3.0;

fn schema_err(path: &Path, line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Schema {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Parses a JSON array or JSONL into `(line, value)` pairs. For arrays the
/// line is the 1-based element position.
fn items(text: &str, path: &Path) -> Result<Vec<(usize, Value)>, CorpusError> {
    if text.trim_start().starts_with('[') {
        let values: Vec<Value> =
            serde_json::from_str(text).map_err(|e| schema_err(path, e.line(), e.to_string()))?;
        return Ok(values.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect());
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| schema_err(path, i + 1, e.to_string()))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn field<'a>(v: &'a Value, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| v.get(*k)).filter(|v| !v.is_null())
}

fn str_field<'a>(v: &'a Value, keys: &[&str]) -> Option<&'a str> {
    field(v, keys).and_then(Value::as_str)
}

fn id_field(v: &Value, keys: &[&str]) -> Option<String> {
    match field(v, keys)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn string_list(v: &Value) -> Option<Vec<String>> {
    v.as_array()?
        .iter()
        .map(|x| x.as_str().map(str::to_string))
        .collect()
}

fn split_from_file_name(path: &Path) -> Option<String> {
    let stem = path.file_name()?.to_str()?.to_ascii_lowercase();
    ["dev", "train", "test"]
        .into_iter()
        .find(|s| stem.contains(s))
        .map(str::to_string)
}

fn document(id: &str, text: String) -> Document {
    Document::new(id, text, &WhitespaceTokenizer)
}

fn letter_index(s: &str) -> Option<usize> {
    let t = s.trim().trim_start_matches('(').trim_end_matches([')', '.']);
    let mut chars = t.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_uppercase() => Some((c as u8 - b'A') as usize),
        _ => None,
    }
}

fn push_checked(
    out: &mut LoadedCorpus,
    record: CorpusRecord,
    path: &Path,
    line: usize,
) -> Result<(), CorpusError> {
    record.check().map_err(|m| schema_err(path, line, m))?;
    out.records.push(record);
    Ok(())
}

pub(super) fn quality(text: &str, path: &Path) -> Result<LoadedCorpus, CorpusError> {
    let mut out = LoadedCorpus::default();
    let split = split_from_file_name(path);
    for (line, article) in items(text, path)? {
        let article_id = id_field(&article, &["article_id", "set_unique_id"])
            .ok_or_else(|| schema_err(path, line, "missing article_id"))?;
        let body = str_field(&article, &["article"])
            .ok_or_else(|| schema_err(path, line, "missing article"))?;
        let doc = document(&article_id, body.to_string());
        let questions = field(&article, &["questions"])
            .and_then(Value::as_array)
            .ok_or_else(|| schema_err(path, line, "missing questions array"))?;
        for (qi, q) in questions.iter().enumerate() {
            let question = str_field(q, &["question"])
                .ok_or_else(|| schema_err(path, line, format!("question {qi}: missing text")))?;
            let options = field(q, &["options"])
                .and_then(string_list)
                .ok_or_else(|| schema_err(path, line, format!("question {qi}: missing options")))?;
            // gold_label is 1-based in the release; absent for unlabeled test data.
            let gold_option = match field(q, &["gold_label"]).and_then(Value::as_u64) {
                Some(0) => return Err(schema_err(path, line, format!("question {qi}: gold_label 0"))),
                Some(n) => Some(n as usize - 1),
                None => None,
            };
            let gold = gold_option
                .and_then(|i| options.get(i).cloned())
                .into_iter()
                .collect();
            let mut split_tags = Vec::new();
            if let Some(scores) = field(q, &["validation"]).and_then(Value::as_array) {
                let values: Vec<f64> = scores
                    .iter()
                    .filter_map(|s| s.get("untimed_eval2_context").and_then(Value::as_f64))
                    .collect();
                if !values.is_empty() {
                    let mean = values.iter().sum::<f64>() / values.len() as f64;
                    let tag = if mean >= QUALITY_LONG_THRESHOLD { "long" } else { "short" };
                    split_tags.push(tag.to_string());
                }
            }
            split_tags.extend(split.clone());
            let id = id_field(q, &["question_unique_id"]).unwrap_or_else(|| format!("{article_id}_{qi}"));
            let record = CorpusRecord {
                dataset: DatasetId::Quality,
                query: Query {
                    id,
                    question: question.to_string(),
                    options: Some(options),
                    document_ref: article_id.clone(),
                    gold,
                    gold_option,
                },
                document: doc.clone(),
                split_tags,
            };
            push_checked(&mut out, record, path, line)?;
        }
    }
    Ok(out)
}

pub(super) fn conditionalqa(
    text: &str,
    path: &Path,
    docs_text: &str,
    docs_path: &Path,
) -> Result<LoadedCorpus, CorpusError> {
    let mut docs: HashMap<String, String> = HashMap::new();
    for (line, d) in items(docs_text, docs_path)? {
        let url = str_field(&d, &["url"]).ok_or_else(|| schema_err(docs_path, line, "document without url"))?;
        let contents = field(&d, &["contents"])
            .and_then(string_list)
            .ok_or_else(|| schema_err(docs_path, line, "document without contents list"))?;
        let mut body = String::new();
        if let Some(title) = str_field(&d, &["title"]) {
            body.push_str(title.trim());
            body.push('\n');
        }
        body.push_str(
            &contents
                .iter()
                .map(|c| strip_html(c))
                .filter(|c| !c.is_empty())
                .collect::<Vec<_>>()
                .join("\n"),
        );
        docs.insert(url.to_string(), body);
    }

    let mut out = LoadedCorpus::default();
    let split = split_from_file_name(path);
    let (mut non_binary, mut missing_doc) = (0usize, 0usize);
    for (line, q) in items(text, path)? {
        let id = id_field(&q, &["id"]).ok_or_else(|| schema_err(path, line, "missing id"))?;
        let url = str_field(&q, &["url"]).ok_or_else(|| schema_err(path, line, "missing url"))?;
        let question = str_field(&q, &["question"]).ok_or_else(|| schema_err(path, line, "missing question"))?;
        let answers = field(&q, &["answers"]).and_then(Value::as_array).cloned().unwrap_or_default();
        let texts: Vec<String> = answers
            .iter()
            .filter_map(|a| a.get(0).or(Some(a)).and_then(Value::as_str))
            .map(|s| s.trim().to_ascii_lowercase())
            .collect();
        let not_answerable = field(&q, &["not_answerable"]).and_then(Value::as_bool).unwrap_or(false);
        let binary = !not_answerable
            && !texts.is_empty()
            && texts.iter().all(|t| t == "yes" || t == "no")
            && texts.iter().all(|t| t == &texts[0]);
        if !binary {
            non_binary += 1;
            continue;
        }
        let Some(body) = docs.get(url) else {
            missing_doc += 1;
            continue;
        };
        let scenario = str_field(&q, &["scenario"]).unwrap_or("").trim();
        let full_question = if scenario.is_empty() {
            question.trim().to_string()
        } else {
            format!("{scenario} {}", question.trim())
        };
        let gold_option = if texts[0] == "yes" { 0 } else { 1 };
        let record = CorpusRecord {
            dataset: DatasetId::Conditionalqa,
            query: Query {
                id,
                question: full_question,
                options: Some(vec!["Yes".into(), "No".into()]),
                document_ref: url.to_string(),
                gold: vec![texts[0].clone()],
                gold_option: Some(gold_option),
            },
            document: document(url, body.clone()),
            split_tags: std::iter::once("binary".to_string()).chain(split.clone()).collect(),
        };
        push_checked(&mut out, record, path, line)?;
    }
    if non_binary > 0 {
        out.warnings.push(format!("{}: skipped {non_binary} non-binary question(s)", path.display()));
    }
    if missing_doc > 0 {
        out.warnings.push(format!("{}: skipped {missing_doc} question(s) with no matching document", path.display()));
    }
    Ok(out)
}

fn length_tag(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_ascii_lowercase()),
        Value::Number(n) => {
            let n = n.as_f64()?;
            Some(format!("{}k", (n / 1000.0).floor() as u64))
        }
        _ => None,
    }
}

fn option_list(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::Array(_) => string_list(v),
        Value::Object(map) => {
            let mut pairs: Vec<(&String, &Value)> = map.iter().collect();
            pairs.sort_by(|a, b| a.0.cmp(b.0));
            pairs.into_iter().map(|(_, v)| v.as_str().map(str::to_string)).collect()
        }
        _ => None,
    }
}

pub(super) fn longreason(text: &str, path: &Path) -> Result<LoadedCorpus, CorpusError> {
    let mut out = LoadedCorpus::default();
    for (line, v) in items(text, path)? {
        let id = id_field(&v, &["id", "index", "example_id"]).unwrap_or_else(|| format!("longreason-{line}"));
        let question = str_field(&v, &["question", "final_inquiry", "inquiry"])
            .ok_or_else(|| schema_err(path, line, "missing question"))?;
        let body = str_field(&v, &["context", "document", "background", "article"])
            .ok_or_else(|| schema_err(path, line, "missing context"))?;
        let options = field(&v, &["options", "choices"])
            .map(|o| option_list(o).ok_or_else(|| schema_err(path, line, "options must be strings")))
            .transpose()?;
        let gold_option = match field(&v, &["answer", "label", "gold"]) {
            Some(Value::String(s)) => letter_index(s).or_else(|| {
                options.as_ref().and_then(|o| o.iter().position(|x| x.trim() == s.trim()))
            }),
            // Numeric answers are read as 0-based indices.
            Some(Value::Number(n)) => n.as_u64().map(|n| n as usize),
            _ => None,
        };
        let gold = match (&options, gold_option) {
            (Some(o), Some(i)) => o.get(i).cloned().into_iter().collect(),
            _ => str_field(&v, &["answer"]).map(str::to_string).into_iter().collect(),
        };
        let split_tags = field(&v, &["context_length", "length", "config"])
            .and_then(length_tag)
            .into_iter()
            .collect();
        let record = CorpusRecord {
            dataset: DatasetId::Longreason,
            query: Query {
                id: id.clone(),
                question: question.to_string(),
                options,
                document_ref: id.clone(),
                gold,
                gold_option,
            },
            document: document(&id, body.to_string()),
            split_tags,
        };
        push_checked(&mut out, record, path, line)?;
    }
    Ok(out)
}

fn qasper_gold(answer: &Value) -> Option<String> {
    let a = answer.get("answer").unwrap_or(answer);
    if a.get("unanswerable").and_then(Value::as_bool).unwrap_or(false) {
        return None;
    }
    if let Some(s) = a.get("free_form_answer").and_then(Value::as_str).filter(|s| !s.trim().is_empty()) {
        return Some(s.trim().to_string());
    }
    if let Some(spans) = a.get("extractive_spans").and_then(string_list).filter(|s| !s.is_empty()) {
        return Some(spans.join(" "));
    }
    match a.get("yes_no").and_then(Value::as_bool) {
        Some(true) => Some("Yes".into()),
        Some(false) => Some("No".into()),
        None => None,
    }
}

fn qasper_document(paper: &Value) -> String {
    let mut parts = Vec::new();
    for key in ["title", "abstract"] {
        if let Some(s) = paper.get(key).and_then(Value::as_str) {
            parts.push(s.trim().to_string());
        }
    }
    for section in paper.get("full_text").and_then(Value::as_array).into_iter().flatten() {
        if let Some(name) = section.get("section_name").and_then(Value::as_str) {
            parts.push(name.trim().to_string());
        }
        for p in section.get("paragraphs").and_then(Value::as_array).into_iter().flatten() {
            if let Some(p) = p.as_str().filter(|p| !p.trim().is_empty()) {
                parts.push(p.trim().to_string());
            }
        }
    }
    parts.retain(|p| !p.is_empty());
    parts.join("\n\n")
}

pub(super) fn qasper(text: &str, path: &Path) -> Result<LoadedCorpus, CorpusError> {
    let papers: Vec<(usize, String, Value)> = match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) if !map.contains_key("qas") => map
            .into_iter()
            .enumerate()
            .map(|(i, (k, v))| (i + 1, k, v))
            .collect(),
        _ => items(text, path)?
            .into_iter()
            .map(|(line, v)| {
                let id = id_field(&v, &["id", "paper_id"]).unwrap_or_else(|| format!("paper-{line}"));
                (line, id, v)
            })
            .collect(),
    };
    let mut out = LoadedCorpus::default();
    let split = split_from_file_name(path);
    let mut unanswerable = 0usize;
    for (line, paper_id, paper) in papers {
        let qas = paper
            .get("qas")
            .and_then(Value::as_array)
            .ok_or_else(|| schema_err(path, line, format!("paper {paper_id}: missing qas")))?;
        let body = qasper_document(&paper);
        for (qi, qa) in qas.iter().enumerate() {
            let question = str_field(qa, &["question"])
                .ok_or_else(|| schema_err(path, line, format!("paper {paper_id} qa {qi}: missing question")))?;
            let mut gold: Vec<String> = Vec::new();
            for answer in qa.get("answers").and_then(Value::as_array).into_iter().flatten() {
                if let Some(g) = qasper_gold(answer) {
                    if !gold.contains(&g) {
                        gold.push(g);
                    }
                }
            }
            if gold.is_empty() {
                unanswerable += 1;
                continue;
            }
            let id = id_field(qa, &["question_id"]).unwrap_or_else(|| format!("{paper_id}_{qi}"));
            let record = CorpusRecord {
                dataset: DatasetId::Qasper,
                query: Query {
                    id,
                    question: question.to_string(),
                    options: None,
                    document_ref: paper_id.clone(),
                    gold,
                    gold_option: None,
                },
                document: document(&paper_id, body.clone()),
                split_tags: std::iter::once("free-form".to_string()).chain(split.clone()).collect(),
            };
            push_checked(&mut out, record, path, line)?;
        }
    }
    if unanswerable > 0 {
        out.warnings.push(format!("{}: skipped {unanswerable} unanswerable question(s)", path.display()));
    }
    Ok(out)
}

pub(super) fn custom(text: &str, path: &Path) -> Result<LoadedCorpus, CorpusError> {
    let mut out = LoadedCorpus::default();
    for (line, v) in items(text, path)? {
        let id = id_field(&v, &["id"]).ok_or_else(|| schema_err(path, line, "missing id"))?;
        let question = str_field(&v, &["question"]).ok_or_else(|| schema_err(path, line, "missing question"))?;
        let body = str_field(&v, &["document"]).ok_or_else(|| schema_err(path, line, "missing document"))?;
        let options = match field(&v, &["options"]) {
            Some(o) => Some(string_list(o).ok_or_else(|| schema_err(path, line, "options must be a list of strings"))?),
            None => None,
        };
        let gold: Vec<String> = match field(&v, &["gold"]) {
            Some(Value::String(s)) => vec![s.clone()],
            Some(list @ Value::Array(_)) => string_list(list).ok_or_else(|| schema_err(path, line, "gold must be strings"))?,
            Some(_) => return Err(schema_err(path, line, "gold must be a string or list of strings")),
            None => Vec::new(),
        };
        let gold_option = match field(&v, &["gold_option"]).and_then(Value::as_u64) {
            Some(i) => Some(i as usize),
            None => options.as_ref().and_then(|opts| {
                gold.iter().find_map(|g| {
                    opts.iter()
                        .position(|o| o.trim().eq_ignore_ascii_case(g.trim()))
                        .or_else(|| letter_index(g).filter(|&i| i < opts.len()))
                })
            }),
        };
        // A bare option letter says nothing to token metrics; score against the option text.
        let gold = match (&options, gold_option) {
            (Some(opts), Some(i)) if gold.is_empty() || gold.iter().all(|g| letter_index(g).is_some()) => {
                opts.get(i).cloned().into_iter().collect()
            }
            _ => gold,
        };
        let doc_id = id_field(&v, &["document_id"]).unwrap_or_else(|| format!("doc-{id}"));
        let split_tags = field(&v, &["split_tags", "tags"]).and_then(string_list).unwrap_or_default();
        let record = CorpusRecord {
            dataset: DatasetId::Custom,
            query: Query {
                id,
                question: question.to_string(),
                options,
                document_ref: doc_id.clone(),
                gold,
                gold_option,
            },
            document: document(&doc_id, body.to_string()),
            split_tags,
        };
        push_checked(&mut out, record, path, line)?;
    }
    Ok(out)
}

/// Drops tags, decodes common entities and collapses runs of whitespace.
pub fn strip_html(html: &str) -> String {
    let mut text = String::with_capacity(html.len());
    let mut in_tag = false;
    for c in html.chars() {
        match (c, in_tag) {
            ('<', false) => in_tag = true,
            ('>', true) => {
                in_tag = false;
                text.push(' ');
            }
            (_, true) => {}
            (c, false) => text.push(c),
        }
    }
    let decoded = text
        .replace("&nbsp;", " ")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&apos;", "'")
        .replace("&amp;", "&");
    decoded.split_whitespace().collect::<Vec<_>>().join(" ")
}
