//! Command implementations behind the `prop-probe` binary.
//!
//! Each `cmd_*` function does the work of one subcommand and returns a
//! typed result; the binary only parses flags, prints and maps
//! [`RunnerError::exit_code`].

mod classify;
mod commands;
pub mod config;
mod evaluate;
pub mod manifest;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{derive_gold, Article, CorpusError, GoldLabels, SpanAnnotation};
use crate::evaluation::{EvalError, PaperModel};
use crate::gateway::{EndpointKind, GatewayError, ModelSpec};
use crate::prompting::{PromptError, PromptPattern, GPT3_MAX_TOKENS, GPT4_MAX_TOKENS};

pub use classify::{build_backend, cmd_classify, ANOMALIES_FILE, MANIFEST_FILE, PREDICTIONS_FILE, RUNLOG_FILE, SPLIT_FILE};
pub use commands::{
    cmd_export_finetune, cmd_preview_prompt, cmd_replay, cmd_split, cmd_validate, ExportOptions, ReplayOptions,
    ReplayOutcome,
};
pub use config::{RunConfig, Settings};
pub use evaluate::{cmd_evaluate, EvaluateOptions, MetricsFile, METRICS_FILE};
pub use manifest::{ArticleRecord, RunManifest, RunStatus};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("corpus validation found {0} violation(s)")]
    Validation(usize),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("no successful prediction for {} article(s): {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error("{failed} of {total} articles failed, above the failure threshold {threshold}")]
    FailureThreshold { failed: usize, total: usize, threshold: f64 },
    #[error("replayed metrics differ from golden file {0}")]
    GoldenMismatch(PathBuf),
}

impl RunnerError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RunnerError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 usage or configuration, 2 corpus or data, 3 run failure threshold
    /// exceeded, 4 replay differs from golden output.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_)
            | RunnerError::Prompt(_)
            | RunnerError::Gateway(_)
            | RunnerError::Io { .. }
            | RunnerError::Format { .. } => 1,
            RunnerError::Corpus(_)
            | RunnerError::Validation(_)
            | RunnerError::Eval(_)
            | RunnerError::MissingPredictions(_) => 2,
            RunnerError::FailureThreshold { .. } => 3,
            RunnerError::GoldenMismatch(_) => 4,
        }
    }
}

/// The five configurations of the published comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelPreset {
    #[serde(rename = "gpt4-base")]
    Gpt4Base,
    #[serde(rename = "gpt4-cot")]
    Gpt4Cot,
    #[serde(rename = "gpt3-base")]
    Gpt3Base,
    #[serde(rename = "gpt3-cot")]
    Gpt3Cot,
    #[serde(rename = "gpt3-noinstr")]
    Gpt3NoInstr,
}

impl ModelPreset {
    pub const ALL: [ModelPreset; 5] = [
        ModelPreset::Gpt4Base,
        ModelPreset::Gpt4Cot,
        ModelPreset::Gpt3Base,
        ModelPreset::Gpt3Cot,
        ModelPreset::Gpt3NoInstr,
    ];

    pub fn paper_model(self) -> PaperModel {
        match self {
            ModelPreset::Gpt4Base => PaperModel::Gpt4Base,
            ModelPreset::Gpt4Cot => PaperModel::Gpt4ChainOfThought,
            ModelPreset::Gpt3Base => PaperModel::Gpt3Base,
            ModelPreset::Gpt3Cot => PaperModel::Gpt3ChainOfThought,
            ModelPreset::Gpt3NoInstr => PaperModel::Gpt3NoInstruction,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.paper_model().tag()
    }

    pub fn pattern(self) -> PromptPattern {
        match self {
            ModelPreset::Gpt4Base | ModelPreset::Gpt3Base => PromptPattern::Base,
            ModelPreset::Gpt4Cot | ModelPreset::Gpt3Cot => PromptPattern::ChainOfThought,
            ModelPreset::Gpt3NoInstr => PromptPattern::NoInstruction,
        }
    }

    /// GPT-3 presets stand for fine-tuned models that only exist in the
    /// account that trained them.
    pub fn is_finetuned(self) -> bool {
        matches!(self, ModelPreset::Gpt3Base | ModelPreset::Gpt3Cot | ModelPreset::Gpt3NoInstr)
    }

    fn default_model_name(self) -> &'static str {
        match self {
            ModelPreset::Gpt4Base | ModelPreset::Gpt4Cot => "gpt-4",
            ModelPreset::Gpt3Base => "davinci:ft-propaganda-base",
            ModelPreset::Gpt3Cot => "davinci:ft-propaganda-cot",
            ModelPreset::Gpt3NoInstr => "davinci:ft-propaganda-noinstr",
        }
    }

    pub fn model_spec(self, name_override: Option<&str>) -> ModelSpec {
        let (max, kind) = if self.is_finetuned() {
            (GPT3_MAX_TOKENS, EndpointKind::Completion)
        } else {
            (GPT4_MAX_TOKENS, EndpointKind::Chat)
        };
        ModelSpec {
            name: name_override.unwrap_or(self.default_model_name()).to_string(),
            max_tokens: max,
            endpoint_kind: kind,
        }
    }
}

impl std::str::FromStr for ModelPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelPreset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown model preset {s:?} (gpt4-base|gpt4-cot|gpt3-base|gpt3-cot|gpt3-noinstr)"))
    }
}

/// Write through a sibling temporary file so readers never see a partial
/// file.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), RunnerError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| RunnerError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| RunnerError::io(path, e))
}

pub(crate) fn to_json_pretty<T: Serialize>(value: &T, path: &Path) -> Result<Vec<u8>, RunnerError> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| RunnerError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    out.push(b'\n');
    Ok(out)
}

/// Gold labels for the loaded articles. Spans for articles that were not
/// loaded are skipped, so a label file covering several corpus directories
/// works with any subset of them.
pub(crate) fn gold_for(articles: &[Article], spans: Vec<SpanAnnotation>) -> Result<Vec<GoldLabels>, CorpusError> {
    let ids: HashSet<&str> = articles.iter().map(|a| a.id.as_str()).collect();
    let total = spans.len();
    let kept: Vec<SpanAnnotation> = spans
        .into_iter()
        .filter(|s| ids.contains(s.article_id.as_str()))
        .collect();
    if kept.len() < total {
        log::info!("skipped {} span(s) for articles outside the loaded corpus", total - kept.len());
    }
    derive_gold(articles, &kept)
}
