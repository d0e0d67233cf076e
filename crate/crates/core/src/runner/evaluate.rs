use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::manifest::read_predictions;
use super::{gold_for, to_json_pretty, write_atomic, RunManifest, RunnerError, MANIFEST_FILE, PREDICTIONS_FILE};
use crate::corpus::{load_annotations, load_articles_from, SplitName};
use crate::evaluation::{compare_to_baseline, confusion_with, BaselineComparison, ConfusionCounts, MetricReport};
use crate::exec::Execution;
use crate::report::{
    comparison_markdown, comparison_tsv, overall_markdown, overall_tsv, per_technique_markdown, per_technique_tsv,
    published_columns, Column,
};

pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub run_dir: PathBuf,
    /// Corpus directories; empty means the ones recorded in the manifest.
    pub corpus: Vec<PathBuf>,
    pub labels: PathBuf,
    /// Where tables and metrics go; defaults to `run_dir`.
    pub out: Option<PathBuf>,
}

/// Everything `metrics.json` holds. No timestamps or paths, so the file is
/// byte-identical for identical predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub model_tag: String,
    pub split: SplitName,
    pub articles: usize,
    pub counts: ConfusionCounts,
    pub report: MetricReport,
    pub comparison: BaselineComparison,
}

/// Score a finished run against gold labels and write metrics plus tables.
pub fn cmd_evaluate(opts: &EvaluateOptions) -> Result<MetricsFile, RunnerError> {
    let manifest = RunManifest::read(&opts.run_dir.join(MANIFEST_FILE))?;
    let predictions: Vec<_> = read_predictions(&opts.run_dir.join(PREDICTIONS_FILE))?
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    let have: HashSet<&str> = predictions.iter().map(|p| p.article_id.as_str()).collect();
    let missing: Vec<String> = manifest
        .article_ids
        .iter()
        .filter(|id| !have.contains(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(RunnerError::MissingPredictions(missing));
    }

    let corpus = if opts.corpus.is_empty() {
        &manifest.config.corpus
    } else {
        &opts.corpus
    };
    let articles = load_articles_from(corpus)?;
    let gold = gold_for(&articles, load_annotations(&opts.labels)?)?;
    let wanted: HashSet<&str> = manifest.article_ids.iter().map(String::as_str).collect();
    let gold: Vec<_> = gold.into_iter().filter(|g| wanted.contains(g.article_id.as_str())).collect();
    if gold.len() != wanted.len() {
        let found: HashSet<&str> = gold.iter().map(|g| g.article_id.as_str()).collect();
        let absent = manifest.article_ids.iter().find(|id| !found.contains(id.as_str())).cloned();
        return Err(crate::corpus::CorpusError::UnknownArticle(absent.unwrap_or_default()).into());
    }

    let counts = confusion_with(&gold, &predictions, Execution::Parallel)?;
    let report = MetricReport::from_counts(&counts);
    let label = format!("{} run", manifest.config.preset.as_str());
    let comparison = compare_to_baseline(&report, &format!("run:{label}"))?;
    let metrics = MetricsFile {
        model_tag: label.clone(),
        split: manifest.split_name,
        articles: gold.len(),
        counts,
        report: report.clone(),
        comparison: comparison.clone(),
    };

    let out = opts.out.clone().unwrap_or_else(|| opts.run_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| RunnerError::io(&out, e))?;
    let metrics_path = out.join(METRICS_FILE);
    write_atomic(&metrics_path, &to_json_pretty(&metrics, &metrics_path)?)?;

    let mut columns = vec![Column::from_report(&label, &report)];
    columns.extend(published_columns());
    let files = [
        ("table1.md", overall_markdown(&columns)),
        ("table1.tsv", overall_tsv(&columns)),
        ("table2.md", per_technique_markdown(&columns)),
        ("table2.tsv", per_technique_tsv(&columns)),
        ("comparison.md", comparison_markdown(&comparison)),
        ("comparison.tsv", comparison_tsv(&comparison)),
    ];
    for (name, body) in files {
        write_atomic(&out.join(name), body.as_bytes())?;
    }
    Ok(metrics)
}
