//! Article and span-annotation loading, article-level gold labels, and
//! seeded train/validation splits.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::techniques::{self, Technique};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus directory not found: {0}")]
    MissingDirectory(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: file is not valid UTF-8")]
    NotUtf8(PathBuf),
    #[error("{0}: article text is empty")]
    EmptyArticle(PathBuf),
    #[error("duplicate article id {id}: {first} and {second}")]
    DuplicateId {
        id: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("{path}:{line}: malformed annotation: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: unknown technique {raw:?}")]
    UnknownTechnique {
        path: PathBuf,
        line: usize,
        raw: String,
    },
    #[error("span references unknown article id {0}")]
    UnknownArticle(String),
    #[error("validation fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("cannot split an empty article list")]
    EmptyCorpus,
    #[error("split manifest: {0}")]
    Manifest(String),
}

/// A news article: numeric id from `article<id>.txt` and the raw text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub text: String,
}

/// A technique span in character offsets, `start` inclusive, `end` exclusive.
///
/// `line` is the 1-based source line the span was read from (0 when the
/// span was built in code).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub article_id: String,
    pub technique: Technique,
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub line: usize,
}

impl SpanAnnotation {
    pub fn new(article_id: &str, technique: Technique, start: usize, end: usize) -> Self {
        SpanAnnotation {
            article_id: article_id.to_string(),
            technique,
            start,
            end,
            line: 0,
        }
    }
}

/// Article-level label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabels {
    pub article_id: String,
    pub labels: BTreeSet<Technique>,
}

/// Numeric ids in numeric order, then any non-numeric ids lexically.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

fn article_id_from_name(name: &str) -> Option<&str> {
    let id = name.strip_prefix("article")?.strip_suffix(".txt")?;
    (!id.is_empty() && id.bytes().all(|b| b.is_ascii_digit())).then_some(id)
}

/// Load every `article<id>.txt` in `dir`, sorted by id.
pub fn load_articles(dir: &Path) -> Result<Vec<Article>, CorpusError> {
    load_articles_from(&[dir])
}

/// Load articles from several directories; ids must be unique across all.
pub fn load_articles_from<P: AsRef<Path>>(dirs: &[P]) -> Result<Vec<Article>, CorpusError> {
    let mut seen: HashMap<String, PathBuf> = HashMap::new();
    let mut articles = Vec::new();
    for dir in dirs {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(CorpusError::MissingDirectory(dir.to_path_buf()));
        }
        let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut paths = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| CorpusError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
            paths.push(entry.path());
        }
        paths.sort();
        for path in paths {
            let Some(id) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(article_id_from_name)
                .map(str::to_string)
            else {
                continue;
            };
            let bytes = fs::read(&path).map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            })?;
            let text = String::from_utf8(bytes).map_err(|_| CorpusError::NotUtf8(path.clone()))?;
            if text.is_empty() {
                return Err(CorpusError::EmptyArticle(path));
            }
            if let Some(first) = seen.get(&id) {
                return Err(CorpusError::DuplicateId {
                    id,
                    first: first.clone(),
                    second: path,
                });
            }
            seen.insert(id.clone(), path);
            articles.push(Article { id, text });
        }
    }
    articles.sort_by(|a, b| compare_ids(&a.id, &b.id));
    Ok(articles)
}

/// Parse annotation TSV text (`article_id TAB technique TAB start TAB end`).
/// `path` is only used in error messages.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<SpanAnnotation>, CorpusError> {
    let mut spans = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.trim_end_matches('\r');
        if content.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedLine {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let fields: Vec<&str> = content.split('\t').collect();
        if fields.len() != 4 {
            return Err(malformed(format!("expected 4 columns, found {}", fields.len())));
        }
        let article_id = fields[0].trim();
        if article_id.is_empty() {
            return Err(malformed("empty article id".into()));
        }
        let technique =
            techniques::normalize(fields[1]).ok_or_else(|| CorpusError::UnknownTechnique {
                path: path.to_path_buf(),
                line,
                raw: fields[1].to_string(),
            })?;
        let offset = |s: &str, name: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| malformed(format!("{name} offset {s:?} is not a non-negative integer")))
        };
        let start = offset(fields[2], "start")?;
        let end = offset(fields[3], "end")?;
        spans.push(SpanAnnotation {
            article_id: article_id.to_string(),
            technique,
            start,
            end,
            line,
        });
    }
    Ok(spans)
}

/// Load span annotations from a TSV file, or from every `*.labels` file in
/// a directory (sorted by file name).
pub fn load_annotations(path: &Path) -> Result<Vec<SpanAnnotation>, CorpusError> {
    let read = |p: &Path| {
        let bytes = fs::read(p).map_err(|source| CorpusError::Io {
            path: p.to_path_buf(),
            source,
        })?;
        String::from_utf8(bytes).map_err(|_| CorpusError::NotUtf8(p.to_path_buf()))
    };
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "labels"))
            .collect();
        files.sort();
        let mut spans = Vec::new();
        for file in files {
            spans.extend(parse_annotations(&read(&file)?, &file)?);
        }
        Ok(spans)
    } else {
        parse_annotations(&read(path)?, path)
    }
}

/// Collapse spans to article-level label sets, one record per article in
/// `articles` order. Articles without spans get an empty set.
pub fn derive_gold(
    articles: &[Article],
    spans: &[SpanAnnotation],
) -> Result<Vec<GoldLabels>, CorpusError> {
    let mut by_id: HashMap<&str, BTreeSet<Technique>> =
        articles.iter().map(|a| (a.id.as_str(), BTreeSet::new())).collect();
    for span in spans {
        by_id
            .get_mut(span.article_id.as_str())
            .ok_or_else(|| CorpusError::UnknownArticle(span.article_id.clone()))?
            .insert(span.technique);
    }
    Ok(articles
        .iter()
        .map(|a| GoldLabels {
            article_id: a.id.clone(),
            labels: by_id.remove(a.id.as_str()).unwrap_or_default(),
        })
        .collect())
}

/// Train / validation / test membership plus the seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub validation_fraction: f64,
}

/// Named section of a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split {other:?} (train|validation|test)")),
        }
    }
}

impl SplitAssignment {
    pub fn ids(&self, name: SplitName) -> &[String] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    /// The split evaluated by default: the task's test set when present,
    /// otherwise the held-out validation split.
    pub fn evaluation_split(&self) -> SplitName {
        if self.test.is_empty() {
            SplitName::Validation
        } else {
            SplitName::Test
        }
    }

    /// Attach test ids supplied separately. They must not overlap the
    /// training pool.
    pub fn with_test(mut self, mut test: Vec<String>) -> Result<Self, CorpusError> {
        let pool: HashSet<&String> = self.train.iter().chain(&self.validation).collect();
        if let Some(dup) = test.iter().find(|id| pool.contains(id)) {
            return Err(CorpusError::Manifest(format!(
                "test id {dup} also appears in the training pool"
            )));
        }
        test.sort_by(|a, b| compare_ids(a, b));
        test.dedup();
        self.test = test;
        Ok(self)
    }

    /// Serialize as the plain-text split manifest.
    pub fn to_manifest(&self) -> String {
        let mut out = String::from("# prop-probe split manifest v1\n");
        let _ = writeln!(out, "seed\t{}", self.seed);
        let _ = writeln!(out, "validation_fraction\t{}", self.validation_fraction);
        for (name, ids) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            let _ = writeln!(out, "[{name}]");
            for id in ids {
                out.push_str(id);
                out.push('\n');
            }
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self, CorpusError> {
        let bad = |m: String| CorpusError::Manifest(m);
        let mut seed = None;
        let mut fraction = None;
        let mut sections: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        let mut current: Option<&str> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if !matches!(name, "train" | "validation" | "test") {
                    return Err(bad(format!("line {}: unknown section [{name}]", i + 1)));
                }
                if sections.contains_key(name) {
                    return Err(bad(format!("line {}: repeated section [{name}]", i + 1)));
                }
                sections.insert(name, Vec::new());
                current = Some(name);
                continue;
            }
            match current {
                Some(name) => sections.get_mut(name).expect("section exists").push(line.to_string()),
                None => {
                    let (key, value) = line
                        .split_once('\t')
                        .ok_or_else(|| bad(format!("line {}: expected key<TAB>value", i + 1)))?;
                    match key {
                        "seed" => {
                            seed = Some(value.parse::<u64>().map_err(|_| {
                                bad(format!("line {}: seed {value:?} is not an integer", i + 1))
                            })?)
                        }
                        "validation_fraction" => {
                            fraction = Some(value.parse::<f64>().map_err(|_| {
                                bad(format!("line {}: bad fraction {value:?}", i + 1))
                            })?)
                        }
                        other => return Err(bad(format!("line {}: unknown key {other:?}", i + 1))),
                    }
                }
            }
        }
        let mut take = |name: &str| sections.remove(name).unwrap_or_default();
        let split = SplitAssignment {
            train: take("train"),
            validation: take("validation"),
            test: take("test"),
            seed: seed.ok_or_else(|| bad("missing seed".into()))?,
            validation_fraction: fraction.ok_or_else(|| bad("missing validation_fraction".into()))?,
        };
        let mut seen = HashSet::new();
        for id in split.train.iter().chain(&split.validation).chain(&split.test) {
            if !seen.insert(id) {
                return Err(bad(format!("id {id} appears in more than one section")));
            }
        }
        Ok(split)
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_manifest(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_manifest()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Seeded split of the training pool: the first `floor(fraction * N)` ids
/// of a ChaCha8 permutation go to validation, the rest to train. Input order
/// does not matter; both sides come back sorted by id.
pub fn split(
    articles: &[Article],
    validation_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment, CorpusError> {
    if !(0.0..=1.0).contains(&validation_fraction) {
        return Err(CorpusError::InvalidFraction(validation_fraction));
    }
    if articles.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut ids: Vec<String> = articles.iter().map(|a| a.id.clone()).collect();
    ids.sort_by(|a, b| compare_ids(a, b));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_val = (validation_fraction * ids.len() as f64).floor() as usize;
    let mut train = ids.split_off(n_val);
    let mut validation = ids;
    train.sort_by(|a, b| compare_ids(a, b));
    validation.sort_by(|a, b| compare_ids(a, b));
    Ok(SplitAssignment {
        train,
        validation,
        test: Vec::new(),
        seed,
        validation_fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FindingKind {
    OffsetOutOfRange,
    EmptySpan,
    UnknownArticle,
}

/// One invariant violation found by [`validate_corpus`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub article_id: String,
    pub line: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub articles: usize,
    pub spans: usize,
    pub technique_counts: BTreeMap<Technique, usize>,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "articles\t{}", self.articles);
        let _ = writeln!(out, "spans\t{}", self.spans);
        for (t, n) in &self.technique_counts {
            let _ = writeln!(out, "{t}\t{n}");
        }
        let _ = writeln!(out, "violations\t{}", self.findings.len());
        for f in &self.findings {
            let _ = writeln!(out, "{:?}\t{}\tline {}\t{}", f.kind, f.article_id, f.line, f.detail);
        }
        out
    }
}

/// Count articles, spans and per-technique spans, and collect every
/// invariant violation without stopping at the first.
pub fn validate_corpus(articles: &[Article], spans: &[SpanAnnotation]) -> ValidationReport {
    let lengths: HashMap<&str, usize> = articles
        .iter()
        .map(|a| (a.id.as_str(), a.text.chars().count()))
        .collect();
    let mut technique_counts: BTreeMap<Technique, usize> =
        techniques::all_techniques().iter().map(|t| (*t, 0)).collect();
    let mut findings = Vec::new();
    for span in spans {
        *technique_counts.entry(span.technique).or_default() += 1;
        let finding = |kind, detail| Finding {
            kind,
            article_id: span.article_id.clone(),
            line: span.line,
            detail,
        };
        match lengths.get(span.article_id.as_str()) {
            None => findings.push(finding(
                FindingKind::UnknownArticle,
                "no article file with this id".to_string(),
            )),
            Some(&len) => {
                if span.start >= span.end {
                    findings.push(finding(
                        FindingKind::EmptySpan,
                        format!("start {} >= end {}", span.start, span.end),
                    ));
                }
                if span.end > len {
                    findings.push(finding(
                        FindingKind::OffsetOutOfRange,
                        format!("end {} beyond article length {len}", span.end),
                    ));
                }
            }
        }
    }
    ValidationReport {
        articles: articles.len(),
        spans: spans.len(),
        technique_counts,
        findings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn art(id: &str, text: &str) -> Article {
        Article { id: id.into(), text: text.into() }
    }

    fn synthetic(n: usize) -> Vec<Article> {
        (0..n).map(|i| art(&(100 + i).to_string(), "x")).collect()
    }

    #[test]
    fn parses_annotation_line() {
        let spans = parse_annotations("111\tLoaded_Language\t10\t25\n", Path::new("t.tsv")).unwrap();
        assert_eq!(spans.len(), 1);
        let s = &spans[0];
        assert_eq!((s.article_id.as_str(), s.technique, s.start, s.end), ("111", Technique::LoadedLanguage, 10, 25));
        assert_eq!(s.line, 1);
    }

    #[test]
    fn annotation_errors_name_the_line() {
        let err = parse_annotations("111\tFearmongering\t0\t5", Path::new("t.tsv")).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownTechnique { line: 1, .. }), "{err}");
        let err = parse_annotations("111\tDoubt\t0\n", Path::new("t.tsv")).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedLine { line: 1, .. }));
        let err = parse_annotations("111\tDoubt\t0\t5\n111\tDoubt\t-1\t5\n", Path::new("t.tsv")).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedLine { line: 2, .. }));
        assert!(parse_annotations("", Path::new("t.tsv")).unwrap().is_empty());
    }

    #[test]
    fn gold_dedups_and_keeps_empty_articles() {
        let articles = vec![art("a1", "0123456789012345678901234567890123456789"), art("a2", "y")];
        let spans = vec![
            SpanAnnotation::new("a1", Technique::LoadedLanguage, 10, 20),
            SpanAnnotation::new("a1", Technique::LoadedLanguage, 30, 40),
            SpanAnnotation::new("a1", Technique::Doubt, 5, 8),
        ];
        let gold = derive_gold(&articles, &spans).unwrap();
        assert_eq!(gold[0].labels, BTreeSet::from([Technique::LoadedLanguage, Technique::Doubt]));
        assert_eq!(gold[1].article_id, "a2");
        assert!(gold[1].labels.is_empty());
        let err = derive_gold(&articles, &[SpanAnnotation::new("zz", Technique::Doubt, 0, 1)]);
        assert!(matches!(err, Err(CorpusError::UnknownArticle(id)) if id == "zz"));
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let articles = synthetic(371);
        let s = split(&articles, 0.2, 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (297, 74));
        let all = split(&articles, 0.0, 7).unwrap();
        assert!(all.validation.is_empty());
        assert_eq!(all.train.len(), 371);
        assert_eq!(split(&articles, 0.2, 7).unwrap(), s);
        let other = split(&articles, 0.2, 8).unwrap();
        assert_eq!(other.validation.len(), 74);
        assert_ne!(other.validation, s.validation);
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(matches!(split(&synthetic(3), 1.5, 0), Err(CorpusError::InvalidFraction(_))));
        assert!(matches!(split(&synthetic(3), -0.1, 0), Err(CorpusError::InvalidFraction(_))));
        assert!(matches!(split(&[], 0.2, 0), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn split_is_input_order_insensitive() {
        let mut articles = synthetic(50);
        let a = split(&articles, 0.3, 11).unwrap();
        articles.reverse();
        assert_eq!(split(&articles, 0.3, 11).unwrap(), a);
    }

    #[test]
    fn manifest_round_trip_and_test_disjointness() {
        let s = split(&synthetic(20), 0.2, 3)
            .unwrap()
            .with_test(vec!["900".into(), "901".into()])
            .unwrap();
        let text = s.to_manifest();
        assert_eq!(SplitAssignment::from_manifest(&text).unwrap(), s);
        assert_eq!(s.evaluation_split(), SplitName::Test);
        let overlap = split(&synthetic(20), 0.2, 3).unwrap().with_test(vec!["100".into()]);
        assert!(overlap.is_err());
        assert!(SplitAssignment::from_manifest("seed\t1\nvalidation_fraction\t0.2\n[train]\n1\n[test]\n1\n").is_err());
        assert!(SplitAssignment::from_manifest("[train]\n1\n").is_err());
    }

    #[test]
    fn validation_reports_without_aborting() {
        let articles = vec![art("1", "short text")];
        let mut far = SpanAnnotation::new("1", Technique::Doubt, 2, 50);
        far.line = 3;
        let spans = vec![
            SpanAnnotation::new("1", Technique::Doubt, 0, 5),
            far,
            SpanAnnotation::new("2", Technique::Slogans, 0, 1),
        ];
        let report = validate_corpus(&articles, &spans);
        assert_eq!(report.findings.len(), 2);
        assert_eq!(report.findings[0].kind, FindingKind::OffsetOutOfRange);
        assert_eq!((report.findings[0].article_id.as_str(), report.findings[0].line), ("1", 3));
        assert_eq!(report.findings[1].kind, FindingKind::UnknownArticle);
        assert_eq!(report.technique_counts[&Technique::Doubt], 2);
        assert!(validate_corpus(&articles, &spans[..1]).is_clean());
    }

    #[test]
    fn offsets_count_characters_not_bytes() {
        let articles = vec![art("1", "héllo")];
        let ok = validate_corpus(&articles, &[SpanAnnotation::new("1", Technique::Doubt, 0, 5)]);
        assert!(ok.is_clean());
    }

    #[test]
    fn id_ordering_is_numeric() {
        let mut ids = vec!["1000", "999", "10", "abc"];
        ids.sort_by(|a, b| compare_ids(a, b));
        assert_eq!(ids, vec!["10", "999", "1000", "abc"]);
    }
}
