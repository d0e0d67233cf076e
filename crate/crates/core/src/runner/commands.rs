use std::fs;
use std::path::{Path, PathBuf};

use super::classify::classify_with_split;
use super::evaluate::{cmd_evaluate, EvaluateOptions, MetricsFile, METRICS_FILE};
use super::{gold_for, RunManifest, RunnerError, Settings, MANIFEST_FILE, RUNLOG_FILE};
use crate::corpus::{
    load_annotations, load_articles, load_articles_from, split, validate_corpus, SplitAssignment, SplitName,
    ValidationReport,
};
use crate::gateway::{export_finetune, write_finetune_jsonl, BackendKind};
use crate::prompting::{build_instruction, check_instruction_size, estimate_tokens, PromptPattern};
use crate::techniques::cards;

/// Load the corpus and labels and check every invariant. Violations are
/// reported, not raised; the caller decides what a dirty report means.
pub fn cmd_validate(corpus: &[PathBuf], labels: &Path) -> Result<ValidationReport, RunnerError> {
    let articles = load_articles_from(corpus)?;
    let spans = load_annotations(labels)?;
    Ok(validate_corpus(&articles, &spans))
}

/// Seeded train/validation split of the corpus, plus an optional held-out
/// test directory, written to `out`.
pub fn cmd_split(settings: &Settings, out: &Path) -> Result<SplitAssignment, RunnerError> {
    let articles = load_articles_from(settings.require_corpus()?)?;
    let mut assignment = split(&articles, settings.fraction(), settings.seed())?;
    if let Some(dir) = &settings.test_corpus {
        let test: Vec<String> = load_articles(dir)?.into_iter().map(|a| a.id).collect();
        assignment = assignment.with_test(test)?;
    }
    assignment.write(out)?;
    Ok(assignment)
}

/// The instruction for `pattern` followed by its token estimate.
pub fn cmd_preview_prompt(pattern: PromptPattern) -> Result<String, RunnerError> {
    let instruction = build_instruction(pattern, cards())?;
    let tokens = estimate_tokens(&instruction);
    if pattern == PromptPattern::Base {
        check_instruction_size(tokens);
    }
    let mut out = instruction;
    if !out.is_empty() {
        out.push('\n');
    }
    out.push_str(&format!("# estimated tokens: {tokens}\n"));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ExportOptions {
    pub corpus: Vec<PathBuf>,
    pub labels: PathBuf,
    /// Restrict to one split section; without a manifest every loaded
    /// article is exported.
    pub split_manifest: Option<PathBuf>,
    pub split_name: SplitName,
    pub patterns: Vec<PromptPattern>,
    pub out: PathBuf,
}

/// Write `finetune-<pattern>.jsonl` for each pattern; returns the paths and
/// record counts.
pub fn cmd_export_finetune(opts: &ExportOptions) -> Result<Vec<(PathBuf, usize)>, RunnerError> {
    let mut articles = load_articles_from(&opts.corpus)?;
    if let Some(path) = &opts.split_manifest {
        let assignment = SplitAssignment::read(path)?;
        let keep: std::collections::HashSet<&str> =
            assignment.ids(opts.split_name).iter().map(String::as_str).collect();
        articles.retain(|a| keep.contains(a.id.as_str()));
    }
    let gold = gold_for(&articles, load_annotations(&opts.labels)?)?;
    fs::create_dir_all(&opts.out).map_err(|e| RunnerError::io(&opts.out, e))?;
    let mut written = Vec::new();
    for pattern in &opts.patterns {
        let records = export_finetune(&articles, &gold, *pattern, cards())?;
        let path = opts.out.join(format!("finetune-{}.jsonl", pattern.as_str()));
        write_finetune_jsonl(&records, &path)?;
        written.push((path, records.len()));
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub run_dir: PathBuf,
    /// Fixture directory; defaults to the run's fixture or record directory.
    pub fixtures: Option<PathBuf>,
    /// Corpus directories; empty means the ones recorded in the manifest.
    pub corpus: Vec<PathBuf>,
    pub labels: PathBuf,
    pub out: PathBuf,
    pub golden: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub manifest: RunManifest,
    pub metrics: MetricsFile,
    /// `Some(true)` when a golden file was given and matched.
    pub golden_match: Option<bool>,
}

/// Re-run a recorded run offline from its manifest and fixtures, score it,
/// and optionally compare `metrics.json` byte-for-byte with a golden copy.
pub fn cmd_replay(opts: &ReplayOptions) -> Result<ReplayOutcome, RunnerError> {
    let original = RunManifest::read(&opts.run_dir.join(MANIFEST_FILE))?;
    let same_dir = match (fs::canonicalize(&opts.run_dir), fs::canonicalize(&opts.out)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same_dir {
        return Err(RunnerError::Config("replay --out must differ from the recorded run directory".into()));
    }
    let mut cfg = original.config.clone();
    cfg.fixtures = opts
        .fixtures
        .clone()
        .or_else(|| cfg.fixtures.clone().filter(|_| cfg.backend == BackendKind::Replay))
        .or_else(|| cfg.record.clone());
    if cfg.fixtures.is_none() {
        return Err(RunnerError::Config("the run recorded no fixtures; pass --fixtures".into()));
    }
    cfg.backend = BackendKind::Replay;
    cfg.record = None;
    cfg.mock_rules = None;
    cfg.out = opts.out.clone();
    if !opts.corpus.is_empty() {
        cfg.corpus = opts.corpus.clone();
    }
    for stale in [MANIFEST_FILE, RUNLOG_FILE] {
        let p = opts.out.join(stale);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| RunnerError::io(&p, e))?;
        }
    }
    let manifest = classify_with_split(&cfg, Some(original.split.clone()))?;
    let metrics = cmd_evaluate(&EvaluateOptions {
        run_dir: opts.out.clone(),
        corpus: Vec::new(),
        labels: opts.labels.clone(),
        out: None,
    })?;
    let golden_match = match &opts.golden {
        None => None,
        Some(golden) => {
            let expected = fs::read(golden).map_err(|e| RunnerError::io(golden, e))?;
            let actual_path = opts.out.join(METRICS_FILE);
            let actual = fs::read(&actual_path).map_err(|e| RunnerError::io(&actual_path, e))?;
            if expected != actual {
                return Err(RunnerError::GoldenMismatch(golden.clone()));
            }
            Some(true)
        }
    };
    Ok(ReplayOutcome {
        manifest,
        metrics,
        golden_match,
    })
}
