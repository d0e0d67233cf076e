//! Run settings from an optional key/value file overlaid with flags.
//!
//! The file format is one `key = value` per line with `#` comments. Keys
//! are the long flag names without dashes (`model-preset`, `fraction`, ...).
//! `corpus` may be repeated.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{ModelPreset, RunnerError};
use crate::corpus::SplitName;
use crate::gateway::{BackendKind, ModelSpec, DEFAULT_CONCURRENCY};
use crate::prompting::PromptPattern;

pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;
pub const DEFAULT_FAILURE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SEED: u64 = 7;

/// Every setting as optional, before defaults are applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub corpus: Vec<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub split_manifest: Option<PathBuf>,
    pub split_name: Option<SplitName>,
    pub model_preset: Option<ModelPreset>,
    pub model_name: Option<String>,
    pub pattern: Option<PromptPattern>,
    pub backend: Option<BackendKind>,
    pub fixtures: Option<PathBuf>,
    pub mock_rules: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub overwrite_fixtures: Option<bool>,
    pub base_url: Option<String>,
    pub seed: Option<u64>,
    pub fraction: Option<f64>,
    pub concurrency: Option<usize>,
    pub completion_reserve: Option<usize>,
    pub failure_threshold: Option<f64>,
    pub out: Option<PathBuf>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, RunnerError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| RunnerError::Config(format!("{key}: {e}")))
}

impl Settings {
    /// Parse the key/value config file.
    pub fn from_file_text(text: &str) -> Result<Settings, RunnerError> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| RunnerError::Config(format!("config line {}: expected key = value", i + 1)))?;
            s.set(key, value)
                .map_err(|e| RunnerError::Config(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), RunnerError> {
        let path = || PathBuf::from(value);
        match key.trim_start_matches("--") {
            "corpus" => self.corpus.push(path()),
            "test-corpus" => self.test_corpus = Some(path()),
            "labels" => self.labels = Some(path()),
            "split-manifest" => self.split_manifest = Some(path()),
            "split-name" => self.split_name = Some(parse_value(key, value)?),
            "model-preset" => self.model_preset = Some(parse_value(key, value)?),
            "model-name" => self.model_name = Some(value.to_string()),
            "pattern" => self.pattern = Some(parse_value(key, value)?),
            "backend" => self.backend = Some(parse_value(key, value)?),
            "fixtures" => self.fixtures = Some(path()),
            "mock-rules" => self.mock_rules = Some(path()),
            "record" => self.record = Some(path()),
            "overwrite-fixtures" => self.overwrite_fixtures = Some(parse_value(key, value)?),
            "base-url" => self.base_url = Some(value.to_string()),
            "seed" => self.seed = Some(parse_value(key, value)?),
            "fraction" => self.fraction = Some(parse_value(key, value)?),
            "concurrency" => self.concurrency = Some(parse_value(key, value)?),
            "completion-reserve" => self.completion_reserve = Some(parse_value(key, value)?),
            "failure-threshold" => self.failure_threshold = Some(parse_value(key, value)?),
            "out" => self.out = Some(path()),
            "temperature" => {
                return Err(RunnerError::Config("temperature is fixed at 0 and cannot be configured".into()))
            }
            other => return Err(RunnerError::Config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// `self` with every setting present in `flags` replaced by the flag.
    pub fn overlay(mut self, flags: Settings) -> Settings {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if flags.$field.is_some() {
                    self.$field = flags.$field;
                }
            )*};
        }
        take!(
            test_corpus, labels, split_manifest, split_name, model_preset, model_name, pattern, backend, fixtures,
            mock_rules, record, overwrite_fixtures, base_url, seed, fraction, concurrency, completion_reserve,
            failure_threshold, out
        );
        if !flags.corpus.is_empty() {
            self.corpus = flags.corpus;
        }
        self
    }

    pub fn require_corpus(&self) -> Result<&[PathBuf], RunnerError> {
        if self.corpus.is_empty() {
            Err(RunnerError::Config("--corpus is required".into()))
        } else {
            Ok(&self.corpus)
        }
    }

    pub fn require_labels(&self) -> Result<&PathBuf, RunnerError> {
        self.labels
            .as_ref()
            .ok_or_else(|| RunnerError::Config("--labels is required".into()))
    }

    pub fn fraction(&self) -> f64 {
        self.fraction.unwrap_or(DEFAULT_VALIDATION_FRACTION)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

/// Fully resolved configuration of a classification run. Temperature is not
/// part of it: every request uses 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: Vec<PathBuf>,
    pub split_manifest: Option<PathBuf>,
    pub split_name: Option<SplitName>,
    pub preset: ModelPreset,
    pub model: ModelSpec,
    pub pattern: PromptPattern,
    pub backend: BackendKind,
    pub fixtures: Option<PathBuf>,
    pub mock_rules: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub overwrite_fixtures: bool,
    pub base_url: Option<String>,
    pub seed: u64,
    pub validation_fraction: f64,
    pub concurrency: usize,
    pub completion_reserve: usize,
    pub failure_threshold: f64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<RunConfig, RunnerError> {
        let preset = s
            .model_preset
            .ok_or_else(|| RunnerError::Config("--model-preset is required".into()))?;
        let backend = s.backend.unwrap_or(BackendKind::Replay);
        if backend == BackendKind::Live && preset.is_finetuned() && s.model_name.is_none() {
            return Err(RunnerError::Config(format!(
                "preset {} targets a fine-tuned model; pass --model-name for live runs",
                preset.as_str()
            )));
        }
        match backend {
            BackendKind::Replay if s.fixtures.is_none() => {
                return Err(RunnerError::Config("--fixtures is required for the replay backend".into()))
            }
            BackendKind::Mock if s.mock_rules.is_none() => {
                return Err(RunnerError::Config("--mock-rules is required for the mock backend".into()))
            }
            _ => {}
        }
        let pattern = s.pattern.unwrap_or(preset.pattern());
        let concurrency = s.concurrency.unwrap_or(DEFAULT_CONCURRENCY);
        if concurrency == 0 {
            return Err(RunnerError::Config("--concurrency must be at least 1".into()));
        }
        let failure_threshold = s.failure_threshold.unwrap_or(DEFAULT_FAILURE_THRESHOLD);
        if !(0.0..=1.0).contains(&failure_threshold) {
            return Err(RunnerError::Config("--failure-threshold must be within [0, 1]".into()));
        }
        let fraction = s.fraction();
        if !(0.0..=1.0).contains(&fraction) {
            return Err(RunnerError::Config("--fraction must be within [0, 1]".into()));
        }
        Ok(RunConfig {
            corpus: s.require_corpus()?.to_vec(),
            split_manifest: s.split_manifest.clone(),
            split_name: s.split_name,
            preset,
            model: preset.model_spec(s.model_name.as_deref()),
            pattern,
            backend,
            fixtures: s.fixtures.clone(),
            mock_rules: s.mock_rules.clone(),
            record: s.record.clone(),
            overwrite_fixtures: s.overwrite_fixtures.unwrap_or(false),
            base_url: s.base_url.clone(),
            seed: s.seed(),
            validation_fraction: fraction,
            concurrency,
            completion_reserve: s.completion_reserve.unwrap_or(pattern.default_completion_reserve()),
            failure_threshold,
            out: s.out.clone().unwrap_or_else(|| PathBuf::from("run")),
        })
    }
}

/// Raw `key -> values` view of a config file, for diagnostics.
pub fn config_keys(text: &str) -> BTreeMap<String, Vec<String>> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for line in text.lines().map(str::trim) {
        if line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.entry(k.trim().to_string()).or_default().push(v.trim().to_string());
        }
    }
    map
}
