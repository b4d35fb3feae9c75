//! Corpus records, dataset loaders and extremity-preserving truncation.

mod loaders;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::executor::Document;
use crate::pipeline::Query;

pub use loaders::strip_html;

pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;
    /// Byte ranges of each token in `text`.
    fn spans(&self, text: &str) -> Vec<(usize, usize)>;

    fn count(&self, text: &str) -> usize {
        self.spans(text).len()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn id(&self) -> &str {
        "whitespace"
    }

    fn spans(&self, text: &str) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    spans.push((s, i));
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push((s, text.len()));
        }
        spans
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Keeps the first `limit / 2` and the last `limit - limit / 2` items when
/// `tokens` is longer than `limit`.
pub fn truncate_extremities<T: Clone>(tokens: &[T], limit: usize) -> Vec<T> {
    if tokens.len() <= limit {
        return tokens.to_vec();
    }
    let head = limit / 2;
    let tail = limit - head;
    let mut out = Vec::with_capacity(limit);
    out.extend_from_slice(&tokens[..head]);
    out.extend_from_slice(&tokens[tokens.len() - tail..]);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub context_limit: usize,
    pub tokenizer_id: String,
}

pub const DEFAULT_CONTEXT_LIMIT: usize = 100_000;

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            context_limit: DEFAULT_CONTEXT_LIMIT,
            tokenizer_id: "whitespace".into(),
        }
    }
}

impl TruncationConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.context_limit < 2 {
            return Err(format!("context limit must be at least 2, got {}", self.context_limit));
        }
        Ok(())
    }
}

/// Text-level truncation: keeps head and tail tokens with their original
/// spacing and joins the two halves with a newline.
pub fn truncate_text(text: &str, limit: usize, tokenizer: &dyn Tokenizer) -> String {
    let spans = tokenizer.spans(text);
    if spans.len() <= limit {
        return text.to_string();
    }
    if limit == 0 {
        return String::new();
    }
    let head = limit / 2;
    let tail = limit - head;
    let head_text = if head == 0 { "" } else { &text[spans[0].0..spans[head - 1].1] };
    let tail_text = &text[spans[spans.len() - tail].0..spans[spans.len() - 1].1];
    match (head_text.is_empty(), tail_text.is_empty()) {
        (true, _) => tail_text.to_string(),
        (_, true) => head_text.to_string(),
        _ => format!("{head_text}\n{tail_text}"),
    }
}

pub fn truncate_document(doc: &Document, config: &TruncationConfig, tokenizer: &dyn Tokenizer) -> Document {
    if doc.token_count <= config.context_limit {
        return doc.clone();
    }
    Document::new(doc.id.clone(), truncate_text(&doc.text, config.context_limit, tokenizer), tokenizer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Quality,
    Conditionalqa,
    Longreason,
    Qasper,
    Custom,
}

impl DatasetId {
    pub const ALL: [DatasetId; 5] = [
        DatasetId::Quality,
        DatasetId::Conditionalqa,
        DatasetId::Longreason,
        DatasetId::Qasper,
        DatasetId::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Quality => "quality",
            DatasetId::Conditionalqa => "conditionalqa",
            DatasetId::Longreason => "longreason",
            DatasetId::Qasper => "qasper",
            DatasetId::Custom => "custom",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetId::ALL
            .into_iter()
            .find(|d| d.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| CorpusError::UnknownDataset(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub dataset: DatasetId,
    pub query: Query,
    pub document: Document,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub split_tags: Vec<String>,
}

impl CorpusRecord {
    pub fn check(&self) -> Result<(), String> {
        self.query.check()?;
        if self.document.text.trim().is_empty() {
            return Err(format!("record {}: empty document", self.query.id));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("reading {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: schema mismatch: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("unknown dataset id {0:?} (expected one of quality, conditionalqa, longreason, qasper, custom)")]
    UnknownDataset(String),
    #[error("{0}")]
    Missing(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedCorpus {
    pub records: Vec<CorpusRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions<'a> {
    /// Companion documents file (ConditionalQA keeps documents separately).
    pub documents: Option<&'a Path>,
    /// Tag added to every record, e.g. `dev` or `train`.
    pub split: Option<String>,
}

pub(crate) fn read_file(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a dataset in its public release format and normalizes it.
pub fn load_corpus(path: &Path, dataset: DatasetId, options: &LoadOptions) -> Result<LoadedCorpus, CorpusError> {
    let text = read_file(path)?;
    let mut loaded = if text.trim().is_empty() {
        LoadedCorpus {
            records: Vec::new(),
            warnings: vec![format!("{}: empty corpus file", path.display())],
        }
    } else {
        match dataset {
            DatasetId::Quality => loaders::quality(&text, path)?,
            DatasetId::Conditionalqa => {
                let docs = options.documents.ok_or_else(|| {
                    CorpusError::Missing("conditionalqa needs the documents file (--docs)".into())
                })?;
                loaders::conditionalqa(&text, path, &read_file(docs)?, docs)?
            }
            DatasetId::Longreason => loaders::longreason(&text, path)?,
            DatasetId::Qasper => loaders::qasper(&text, path)?,
            DatasetId::Custom => loaders::custom(&text, path)?,
        }
    };
    if let Some(split) = &options.split {
        for record in &mut loaded.records {
            if !record.split_tags.contains(split) {
                record.split_tags.push(split.clone());
            }
        }
    }
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    Ok(loaded)
}

/// Reads the native JSONL format (one [`CorpusRecord`] per line).
pub fn read_native(path: &Path) -> Result<LoadedCorpus, CorpusError> {
    let text = read_file(path)?;
    let mut loaded = LoadedCorpus::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| CorpusError::Schema {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let record: CorpusRecord = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        record.check().map_err(schema)?;
        loaded.records.push(record);
    }
    if loaded.records.is_empty() {
        loaded.warnings.push(format!("{}: empty corpus file", path.display()));
    }
    Ok(loaded)
}

pub fn write_native(records: &[CorpusRecord], path: &Path) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for record in records {
        let line = serde_json::to_string(record).expect("corpus records serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}
