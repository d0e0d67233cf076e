//! Persisted run state: the JSON manifest and the predictions / anomalies
//! TSV files next to it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{to_json_pretty, write_atomic, RunConfig, RunnerError};
use crate::corpus::{SplitAssignment, SplitName};
use crate::evaluation::Prediction;
use crate::gateway::FinishReason;
use crate::parsing::AnomalyKind;
use crate::techniques::Technique;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Incomplete,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub token_estimate: usize,
    pub request_hash: String,
    pub finish_reason: Option<FinishReason>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub chunk: usize,
    pub kind: AnomalyKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub article_id: String,
    pub chunks: Vec<ChunkRecord>,
    pub labels: BTreeSet<Technique>,
    pub rationales: BTreeMap<Technique, String>,
    pub anomalies: Vec<AnomalyRecord>,
    /// Set when any chunk failed; the article then has no prediction.
    pub error: Option<String>,
}

impl ArticleRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub status: RunStatus,
    pub config: RunConfig,
    pub split: SplitAssignment,
    pub split_name: SplitName,
    pub article_ids: Vec<String>,
    pub instruction_tokens: usize,
    pub chunk_budget: usize,
    pub articles: Vec<ArticleRecord>,
    pub failed: usize,
    pub started_at: String,
    pub finished_at: Option<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<RunManifest, RunnerError> {
        let text = fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| RunnerError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(RunnerError::Format {
                path: path.to_path_buf(),
                message: format!("manifest version {} is not supported", m.version),
            });
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), RunnerError> {
        write_atomic(path, &to_json_pretty(self, path)?)
    }

    pub fn predictions(&self) -> Vec<Prediction> {
        self.articles
            .iter()
            .filter(|a| a.succeeded())
            .map(|a| Prediction {
                article_id: a.article_id.clone(),
                labels: a.labels.clone(),
            })
            .collect()
    }
}

/// Backslash escapes for tab, newline, carriage return and backslash.
pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

const PREDICTIONS_HEADER: &str = "article_id\tlabels\tanomalies";
const ANOMALIES_HEADER: &str = "article_id\tchunk\tkind\tdetail";

/// One row per successful article: id, labels joined by an escaped
/// newline, anomaly count.
pub fn render_predictions(articles: &[ArticleRecord]) -> String {
    let mut out = format!("{PREDICTIONS_HEADER}\n");
    for a in articles.iter().filter(|a| a.succeeded()) {
        let labels: Vec<&str> = a.labels.iter().map(|t| t.identifier()).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            escape_field(&a.article_id),
            escape_field(&labels.join("\n")),
            a.anomalies.len()
        );
    }
    out
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<Vec<(Prediction, usize)>, RunnerError> {
    let bad = |line: usize, message: String| RunnerError::Format {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || (i == 0 && line == PREDICTIONS_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(i + 1, format!("expected 3 fields, found {}", fields.len())));
        }
        let labels_text = unescape_field(fields[1]);
        let mut labels = BTreeSet::new();
        for raw in labels_text.split('\n').filter(|l| !l.is_empty()) {
            let t: Technique = raw.parse().map_err(|e| bad(i + 1, format!("{e}")))?;
            labels.insert(t);
        }
        let count: usize = fields[2]
            .parse()
            .map_err(|_| bad(i + 1, format!("anomaly count {:?} is not a number", fields[2])))?;
        out.push((
            Prediction {
                article_id: unescape_field(fields[0]),
                labels,
            },
            count,
        ));
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<(Prediction, usize)>, RunnerError> {
    let text = fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
    parse_predictions(&text, path)
}

pub fn render_anomalies(articles: &[ArticleRecord]) -> String {
    let mut out = format!("{ANOMALIES_HEADER}\n");
    for a in articles {
        for an in &a.anomalies {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                escape_field(&a.article_id),
                an.chunk,
                an.kind,
                escape_field(&an.detail)
            );
        }
    }
    out
}

/// `(article_id, chunk, kind, detail)` rows.
pub fn parse_anomalies(text: &str) -> Vec<(String, usize, String, String)> {
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return None;
            }
            Some((unescape_field(f[0]), f[1].parse().ok()?, f[2].to_string(), unescape_field(f[3])))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, labels: &[Technique], error: Option<&str>) -> ArticleRecord {
        ArticleRecord {
            article_id: id.into(),
            chunks: vec![],
            labels: labels.iter().copied().collect(),
            rationales: BTreeMap::new(),
            anomalies: vec![AnomalyRecord {
                chunk: 0,
                kind: AnomalyKind::UnknownLabel,
                detail: "Bandwagon\tetc".into(),
            }],
            error: error.map(String::from),
        }
    }

    #[test]
    fn escaping_round_trips() {
        for s in ["plain", "a\tb\nc", "back\\slash\\n", "\\", ""] {
            assert_eq!(unescape_field(&escape_field(s)), s);
        }
    }

    #[test]
    fn predictions_round_trip() {
        let recs = vec![
            record("1", &[Technique::Doubt, Technique::Slogans], None),
            record("2", &[], None),
            record("3", &[Technique::Doubt], Some("boom")),
        ];
        let text = render_predictions(&recs);
        assert_eq!(
            text,
            "article_id\tlabels\tanomalies\n1\tDoubt\\nSlogans\t1\n2\t\t1\n"
        );
        let back = parse_predictions(&text, Path::new("p.tsv")).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0.labels, recs[0].labels);
        assert!(back[1].0.labels.is_empty());
        assert!(parse_predictions("1\tNotALabel\t0\n", Path::new("p")).is_err());
        assert!(parse_predictions("1\t0\n", Path::new("p")).is_err());
    }

    #[test]
    fn anomalies_round_trip() {
        let text = render_anomalies(&[record("7", &[], None)]);
        assert_eq!(
            parse_anomalies(&text),
            vec![("7".to_string(), 0, "UnknownLabel".to_string(), "Bandwagon\tetc".to_string())]
        );
    }
}
