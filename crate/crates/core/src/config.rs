//! Run configuration: one JSON file, overridable from the command line.
//! Secrets never live here; the OpenAI backend reads its key from the
//! environment variable named in `api_key_env`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::TruncationConfig;
use crate::gateway::OpenAiConfig;
use crate::metrics::WindowConfig;
use crate::pipeline::{PipelineConfig, PlannerMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Ppa,
    Gqa,
    Cot,
    PlanAndSolve,
    VanillaPlan,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Ppa,
        Strategy::Gqa,
        Strategy::Cot,
        Strategy::PlanAndSolve,
        Strategy::VanillaPlan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ppa => "ppa",
            Strategy::Gqa => "gqa",
            Strategy::Cot => "cot",
            Strategy::PlanAndSolve => "plan-and-solve",
            Strategy::VanillaPlan => "vanilla-plan",
        }
    }

    pub fn is_plan_based(self) -> bool {
        matches!(self, Strategy::Ppa | Strategy::VanillaPlan)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?} (expected ppa, gqa, cot, plan-and-solve or vanilla-plan)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Openai,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(BackendKind::Scripted),
            "openai" => Ok(BackendKind::Openai),
            _ => Err(format!("unknown backend {s:?} (expected scripted or openai)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Script file for the scripted backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    pub openai: OpenAiConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    /// No entailment scoring; NLI is absent from the report.
    #[default]
    None,
    /// Token-overlap stand-in for offline runs.
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NliConfig {
    pub scorer: ScorerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub windows: WindowConfig,
    pub timeout_secs: u64,
}

impl Default for NliConfig {
    fn default() -> Self {
        Self {
            scorer: ScorerKind::None,
            endpoint: None,
            windows: WindowConfig::default(),
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerMode {
    /// Output of the last plan step.
    #[default]
    LastStep,
    /// All step outputs concatenated.
    Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub pipeline: PipelineConfig,
    pub backend: BackendConfig,
    /// Separate judge backend; the main backend is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_backend: Option<BackendConfig>,
    pub nli: NliConfig,
    pub truncation: TruncationConfig,
    pub answer_mode: AnswerMode,
    pub workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registry_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ppa,
            pipeline: PipelineConfig::default(),
            backend: BackendConfig::default(),
            judge_backend: None,
            nli: NliConfig::default(),
            truncation: TruncationConfig::default(),
            answer_mode: AnswerMode::LastStep,
            workers: 1,
            templates_dir: None,
            registry_path: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config {path}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    /// Pipeline settings as the chosen strategy runs them.
    pub fn effective_pipeline(&self) -> PipelineConfig {
        let mut p = self.pipeline.clone();
        if self.strategy == Strategy::VanillaPlan {
            p.use_predictor = false;
            p.planner = PlannerMode::Vanilla;
        }
        p
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let invalid = ConfigError::Invalid;
        self.pipeline.check().map_err(invalid)?;
        self.truncation.check().map_err(invalid)?;
        self.nli.windows.check().map_err(invalid)?;
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1".into()));
        }
        for backend in std::iter::once(&self.backend).chain(&self.judge_backend) {
            if backend.kind == BackendKind::Scripted && backend.script.is_none() {
                return Err(invalid("scripted backend needs a script file (--script)".into()));
            }
        }
        if self.nli.scorer == ScorerKind::Http && self.nli.endpoint.is_none() {
            return Err(invalid("http entailment scorer needs nli.endpoint".into()));
        }
        Ok(())
    }
}
