//! Micro-averaged precision / recall / F1 over (article, technique) pairs,
//! per-technique F1, and comparison against published figures.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::GoldLabels;
use crate::exec::Execution;
use crate::techniques::{all_techniques, Technique};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("duplicate gold record for article {0}")]
    DuplicateGold(String),
    #[error("duplicate prediction for article {0}")]
    DuplicatePrediction(String),
    #[error("prediction for unknown article {0}")]
    UnknownArticle(String),
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("unknown model tag {0:?}")]
    UnknownModelTag(String),
}

/// Predicted label set for one article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub article_id: String,
    pub labels: BTreeSet<Technique>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn merge(self, other: Counts) -> Counts {
        Counts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Global and per-technique confusion counts. `per_technique` always holds
/// all 14 techniques and sums to `total`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub total: Counts,
    pub per_technique: BTreeMap<Technique, Counts>,
}

impl Default for ConfusionCounts {
    fn default() -> Self {
        ConfusionCounts {
            total: Counts::default(),
            per_technique: all_techniques().iter().map(|t| (*t, Counts::default())).collect(),
        }
    }
}

impl ConfusionCounts {
    /// Fieldwise sum; associative and commutative.
    pub fn merge(mut self, other: ConfusionCounts) -> ConfusionCounts {
        self.total = self.total.merge(other.total);
        for (t, c) in other.per_technique {
            let slot = self.per_technique.entry(t).or_default();
            *slot = slot.merge(c);
        }
        self
    }

    /// Counts contributed by a single article.
    pub fn for_article(gold: &BTreeSet<Technique>, pred: &BTreeSet<Technique>) -> ConfusionCounts {
        let mut c = ConfusionCounts::default();
        for t in all_techniques() {
            let (g, p) = (gold.contains(t), pred.contains(t));
            let slot = c.per_technique.get_mut(t).expect("all techniques present");
            match (g, p) {
                (true, true) => slot.tp += 1,
                (false, true) => slot.fp += 1,
                (true, false) => slot.fn_ += 1,
                (false, false) => {}
            }
        }
        c.total = c.per_technique.values().fold(Counts::default(), |a, b| a.merge(*b));
        c
    }
}

pub fn confusion(gold: &[GoldLabels], pred: &[Prediction]) -> Result<ConfusionCounts, EvalError> {
    confusion_with(gold, pred, Execution::Sequential)
}

/// Confusion counts over every gold article. Articles without a
/// prediction count as predicting the empty set.
pub fn confusion_with(gold: &[GoldLabels], pred: &[Prediction], exec: Execution) -> Result<ConfusionCounts, EvalError> {
    let mut gold_ids = HashSet::new();
    for g in gold {
        if !gold_ids.insert(g.article_id.as_str()) {
            return Err(EvalError::DuplicateGold(g.article_id.clone()));
        }
    }
    let mut by_id: HashMap<&str, &BTreeSet<Technique>> = HashMap::new();
    for p in pred {
        if !gold_ids.contains(p.article_id.as_str()) {
            return Err(EvalError::UnknownArticle(p.article_id.clone()));
        }
        if by_id.insert(p.article_id.as_str(), &p.labels).is_some() {
            return Err(EvalError::DuplicatePrediction(p.article_id.clone()));
        }
    }
    let empty = BTreeSet::new();
    Ok(exec.map_reduce(
        gold,
        ConfusionCounts::default(),
        |g| ConfusionCounts::for_article(&g.labels, by_id.get(g.article_id.as_str()).copied().unwrap_or(&empty)),
        ConfusionCounts::merge,
    ))
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1_from_pr(precision: f64, recall: f64) -> Result<f64, EvalError> {
    for (name, value) in [("precision", precision), ("recall", recall)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(EvalError::OutOfRange { name, value });
        }
    }
    Ok(harmonic(precision, recall))
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Micro {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn metrics_for(c: Counts) -> Micro {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Micro {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

/// Overall micro metrics; zero denominators yield 0.
pub fn micro_metrics(c: &ConfusionCounts) -> Micro {
    metrics_for(c.total)
}

pub fn per_label_f1(c: &ConfusionCounts) -> BTreeMap<Technique, f64> {
    c.per_technique.iter().map(|(t, counts)| (*t, metrics_for(*counts).f1)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_label_f1: BTreeMap<Technique, f64>,
}

impl MetricReport {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let m = micro_metrics(c);
        MetricReport {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            per_label_f1: per_label_f1(c),
        }
    }
}

/// The five model variants with published results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PaperModel {
    Gpt4Base,
    Gpt4ChainOfThought,
    Gpt3Base,
    Gpt3ChainOfThought,
    Gpt3NoInstruction,
}

impl PaperModel {
    pub const ALL: [PaperModel; 5] = [
        PaperModel::Gpt4Base,
        PaperModel::Gpt4ChainOfThought,
        PaperModel::Gpt3Base,
        PaperModel::Gpt3ChainOfThought,
        PaperModel::Gpt3NoInstruction,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            PaperModel::Gpt4Base => "gpt4-base",
            PaperModel::Gpt4ChainOfThought => "gpt4-cot",
            PaperModel::Gpt3Base => "gpt3-base",
            PaperModel::Gpt3ChainOfThought => "gpt3-cot",
            PaperModel::Gpt3NoInstruction => "gpt3-noinstr",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            PaperModel::Gpt4Base => "GPT-4 base",
            PaperModel::Gpt4ChainOfThought => "GPT-4 chain of thought",
            PaperModel::Gpt3Base => "GPT-3 base",
            PaperModel::Gpt3ChainOfThought => "GPT-3 chain of thought",
            PaperModel::Gpt3NoInstruction => "GPT-3 no instruction",
        }
    }

    pub fn from_tag(tag: &str) -> Option<PaperModel> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    /// Published (precision, recall, F1) in percent.
    pub fn published_micro(self) -> (f64, f64, f64) {
        match self {
            PaperModel::Gpt4Base => (52.86, 64.52, 58.11),
            PaperModel::Gpt4ChainOfThought => (56.86, 57.82, 57.34),
            PaperModel::Gpt3Base => (44.35, 44.00, 44.18),
            PaperModel::Gpt3ChainOfThought => (48.62, 28.16, 35.66),
            PaperModel::Gpt3NoInstruction => (47.54, 32.48, 38.59),
        }
    }

    /// Published per-technique F1 in percent, table order.
    pub fn published_per_technique(self) -> [f64; 14] {
        match self {
            PaperModel::Gpt4Base => [
                23.52, 52.50, 0.00, 54.54, 32.55, 52.63, 64.00, 32.00, 92.75, 77.67, 56.67, 9.09, 20.00, 14.81,
            ],
            PaperModel::Gpt4ChainOfThought => [
                19.05, 0.00, 0.00, 0.00, 50.00, 54.54, 64.00, 0.00, 93.62, 74.29, 65.79, 10.00, 0.00, 33.33,
            ],
            PaperModel::Gpt3Base => [
                11.11, 8.70, 0.00, 12.5, 0.00, 16.98, 16.28, 43.48, 73.51, 54.96, 31.88, 21.74, 0.00, 0.00,
            ],
            PaperModel::Gpt3ChainOfThought => [
                16.67, 0.00, 0.00, 0.00, 0.00, 19.42, 8.22, 0.00, 71.39, 31.32, 16.00, 21.74, 0.00, 0.00,
            ],
            PaperModel::Gpt3NoInstruction => [
                0.00, 0.00, 0.00, 10.00, 0.00, 16.22, 0.00, 26.96, 70.02, 50.00, 17.78, 6.67, 0.00, 0.00,
            ],
        }
    }

    /// Published figures as a report (fractions, not percent).
    pub fn published_report(self) -> MetricReport {
        let (p, r, f1) = self.published_micro();
        MetricReport {
            precision: p / 100.0,
            recall: r / 100.0,
            f1: f1 / 100.0,
            per_label_f1: per_technique_map(&self.published_per_technique()),
        }
    }
}

fn per_technique_map(percent: &[f64; 14]) -> BTreeMap<Technique, f64> {
    all_techniques().iter().zip(percent).map(|(t, v)| (*t, v / 100.0)).collect()
}

/// Fine-tuned RoBERTa baseline: overall F1 in percent (precision and recall
/// were not published).
pub const BASELINE_F1: f64 = 63.40;

/// Baseline per-technique F1 in percent, table order.
pub const BASELINE_PER_TECHNIQUE: [f64; 14] = [
    47.36, 43.6, 4.87, 24.09, 19.44, 61.36, 33.03, 61.49, 75.71, 67.49, 31.14, 54.90, 25.0, 20.83,
];

pub fn baseline_per_technique() -> BTreeMap<Technique, f64> {
    per_technique_map(&BASELINE_PER_TECHNIQUE)
}

pub const BASELINE_CAVEAT: &str = "Baseline F1 values come from a test set whose labels are not public, \
so the per-technique comparison is indicative only.";

/// What a comparison row is labelled with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelTag {
    Paper(PaperModel),
    Baseline,
    Run(String),
}

impl ModelTag {
    /// `gpt4-base` .. `gpt3-noinstr`, `baseline`, or `run:<name>`.
    pub fn parse(tag: &str) -> Result<ModelTag, EvalError> {
        if let Some(m) = PaperModel::from_tag(tag) {
            return Ok(ModelTag::Paper(m));
        }
        if tag == "baseline" {
            return Ok(ModelTag::Baseline);
        }
        match tag.strip_prefix("run:") {
            Some(name) if !name.trim().is_empty() => Ok(ModelTag::Run(name.to_string())),
            _ => Err(EvalError::UnknownModelTag(tag.to_string())),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelTag::Paper(m) => m.display_name().to_string(),
            ModelTag::Baseline => "Baseline".to_string(),
            ModelTag::Run(name) => name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub technique: Technique,
    pub model_f1: f64,
    pub baseline_f1: f64,
    /// Signed difference in percentage points.
    pub delta_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub model: ModelTag,
    pub rows: Vec<ComparisonRow>,
    pub above_baseline: usize,
    pub overall_f1: f64,
    pub overall_delta_points: f64,
    pub caveat: String,
}

/// Per-technique F1 against the baseline with signed deltas and the number
/// of techniques where the model is strictly better.
pub fn compare_to_baseline(report: &MetricReport, model_tag: &str) -> Result<BaselineComparison, EvalError> {
    let model = ModelTag::parse(model_tag)?;
    let baseline = baseline_per_technique();
    let rows: Vec<ComparisonRow> = all_techniques()
        .iter()
        .map(|t| {
            let model_f1 = report.per_label_f1.get(t).copied().unwrap_or(0.0);
            let baseline_f1 = baseline[t];
            ComparisonRow {
                technique: *t,
                model_f1,
                baseline_f1,
                delta_points: (model_f1 - baseline_f1) * 100.0,
            }
        })
        .collect();
    let above_baseline = rows.iter().filter(|r| r.model_f1 > r.baseline_f1).count();
    Ok(BaselineComparison {
        model,
        above_baseline,
        overall_f1: report.f1,
        overall_delta_points: (report.f1 - BASELINE_F1 / 100.0) * 100.0,
        rows,
        caveat: BASELINE_CAVEAT.to_string(),
    })
}

/// Baseline per-technique figures as a report (overall P/R unknown, 0).
pub fn baseline_report() -> MetricReport {
    MetricReport {
        precision: 0.0,
        recall: 0.0,
        f1: BASELINE_F1 / 100.0,
        per_label_f1: baseline_per_technique(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Technique::*;

    fn g(id: &str, labels: &[Technique]) -> GoldLabels {
        GoldLabels {
            article_id: id.into(),
            labels: labels.iter().copied().collect(),
        }
    }

    fn p(id: &str, labels: &[Technique]) -> Prediction {
        Prediction {
            article_id: id.into(),
            labels: labels.iter().copied().collect(),
        }
    }

    #[test]
    fn confusion_example() {
        let gold = vec![g("a1", &[LoadedLanguage, Doubt]), g("a2", &[Slogans])];
        let pred = vec![p("a1", &[LoadedLanguage]), p("a2", &[Slogans, Doubt])];
        let c = confusion(&gold, &pred).unwrap();
        assert_eq!(c.total, Counts { tp: 2, fp: 1, fn_: 1 });
        let m = micro_metrics(&c);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.per_technique[&Doubt], Counts { tp: 0, fp: 1, fn_: 1 });
    }

    #[test]
    fn identity_and_empty_predictions() {
        let gold = vec![g("a1", &[LoadedLanguage, Doubt]), g("a2", &[Slogans]), g("a3", &[])];
        let pred: Vec<Prediction> = gold.iter().map(|x| p(&x.article_id, &x.labels.iter().copied().collect::<Vec<_>>())).collect();
        let c = confusion(&gold, &pred).unwrap();
        assert_eq!(c.total, Counts { tp: 3, fp: 0, fn_: 0 });
        let r = MetricReport::from_counts(&c);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let c = confusion(&gold, &[]).unwrap();
        assert_eq!(c.total, Counts { tp: 0, fp: 0, fn_: 3 });
        let m = micro_metrics(&c);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn confusion_errors() {
        let gold = vec![g("a1", &[Doubt])];
        assert_eq!(confusion(&gold, &[p("zz", &[])]), Err(EvalError::UnknownArticle("zz".into())));
        assert_eq!(
            confusion(&gold, &[p("a1", &[]), p("a1", &[])]),
            Err(EvalError::DuplicatePrediction("a1".into()))
        );
        assert_eq!(confusion(&[g("x", &[]), g("x", &[])], &[]), Err(EvalError::DuplicateGold("x".into())));
    }

    #[test]
    fn zero_denominators() {
        let m = metrics_for(Counts::default());
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = metrics_for(Counts { tp: 7, fp: 0, fn_: 0 });
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        assert_eq!(metrics_for(Counts { tp: 0, fp: 0, fn_: 5 }).f1, 0.0);
    }

    #[test]
    fn per_label_doubt_three_one_one() {
        let mut c = ConfusionCounts::default();
        c.per_technique.insert(Doubt, Counts { tp: 3, fp: 1, fn_: 1 });
        let f = per_label_f1(&c);
        assert!((f[&Doubt] - 0.75).abs() < 1e-12);
        assert_eq!(f[&Slogans], 0.0);
    }

    #[test]
    fn f1_from_pr_examples() {
        assert!((f1_from_pr(0.5286, 0.6452).unwrap() - 0.5811).abs() < 0.0005);
        assert!((f1_from_pr(0.5686, 0.5782).unwrap() - 0.5734).abs() < 0.0005);
        for x in [0.0, 0.1, 0.5, 0.93, 1.0] {
            assert!((f1_from_pr(x, x).unwrap() - x).abs() < 1e-15);
        }
        assert!(f1_from_pr(1.2, 0.5).is_err());
        assert!(f1_from_pr(0.5, -0.01).is_err());
    }

    #[test]
    fn published_rows_satisfy_harmonic_identity() {
        for m in PaperModel::ALL {
            let (p, r, f1) = m.published_micro();
            let derived = f1_from_pr(p / 100.0, r / 100.0).unwrap() * 100.0;
            assert!((derived - f1).abs() <= 0.02, "{m:?}: {derived} vs {f1}");
        }
    }

    #[test]
    fn gpt4_base_beats_baseline_on_seven() {
        let cmp = compare_to_baseline(&PaperModel::Gpt4Base.published_report(), "gpt4-base").unwrap();
        assert_eq!(cmp.above_baseline, 7);
        let loaded = cmp.rows.iter().find(|r| r.technique == LoadedLanguage).unwrap();
        assert!((loaded.delta_points - 17.04).abs() < 1e-9);
        assert!(!cmp.caveat.is_empty());
    }

    #[test]
    fn baseline_against_itself() {
        let cmp = compare_to_baseline(&baseline_report(), "baseline").unwrap();
        assert_eq!(cmp.above_baseline, 0);
        assert!(cmp.rows.iter().all(|r| r.delta_points == 0.0));
        assert!(matches!(compare_to_baseline(&baseline_report(), "gpt5"), Err(EvalError::UnknownModelTag(_))));
        assert!(compare_to_baseline(&baseline_report(), "run:").is_err());
        assert!(compare_to_baseline(&baseline_report(), "run:mine").is_ok());
    }

    #[test]
    fn parallel_matches_sequential() {
        let gold: Vec<GoldLabels> = (0..200)
            .map(|i| g(&i.to_string(), &[all_techniques()[i % 14], all_techniques()[(i * 7) % 14]]))
            .collect();
        let pred: Vec<Prediction> = (0..200).step_by(2).map(|i| p(&i.to_string(), &[all_techniques()[(i * 3) % 14]])).collect();
        let a = confusion_with(&gold, &pred, Execution::Sequential).unwrap();
        let b = confusion_with(&gold, &pred, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let sum = a.per_technique.values().fold(Counts::default(), |x, y| x.merge(*y));
        assert_eq!(sum, a.total);
    }
}
