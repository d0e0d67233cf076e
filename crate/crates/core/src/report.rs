//! Text renderings of metric reports: overall table (model, precision,
//! recall, F1), per-technique F1 table, and baseline comparison. Every table
//! comes as TSV for machines and as aligned markdown for people.

use std::fmt::Write as _;

use crate::evaluation::{BaselineComparison, MetricReport, PaperModel, BASELINE_F1, BASELINE_PER_TECHNIQUE};
use crate::techniques::all_techniques;

/// Percentage with two decimals, e.g. `58.11%`.
pub fn pct(fraction: f64) -> String {
    format!("{:.2}%", fraction * 100.0)
}

/// One column of results: a label plus its report. `precision`/`recall`
/// are `None` where a source only published F1.
#[derive(Debug, Clone)]
pub struct Column {
    pub label: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
    pub per_label_f1: Vec<f64>,
}

impl Column {
    pub fn from_report(label: &str, r: &MetricReport) -> Self {
        Column {
            label: label.to_string(),
            precision: Some(r.precision),
            recall: Some(r.recall),
            f1: r.f1,
            per_label_f1: all_techniques()
                .iter()
                .map(|t| r.per_label_f1.get(t).copied().unwrap_or(0.0))
                .collect(),
        }
    }

    pub fn baseline() -> Self {
        Column {
            label: "Baseline".to_string(),
            precision: None,
            recall: None,
            f1: BASELINE_F1 / 100.0,
            per_label_f1: BASELINE_PER_TECHNIQUE.iter().map(|v| v / 100.0).collect(),
        }
    }
}

/// The five published model columns followed by the baseline.
pub fn published_columns() -> Vec<Column> {
    let mut cols: Vec<Column> = PaperModel::ALL
        .iter()
        .map(|m| Column::from_report(m.display_name(), &m.published_report()))
        .collect();
    cols.push(Column::baseline());
    cols
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), pct)
}

fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].chars().count())
                .chain(std::iter::once(header[i].chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::from("|");
        for (i, c) in cells.iter().enumerate() {
            let pad = widths[i] - c.chars().count();
            if i == 0 {
                let _ = write!(s, " {c}{} |", " ".repeat(pad));
            } else {
                let _ = write!(s, " {}{c} |", " ".repeat(pad));
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header);
    out.push('|');
    for (i, w) in widths.iter().enumerate() {
        if i == 0 {
            let _ = write!(out, ":{}|", "-".repeat(w + 1));
        } else {
            let _ = write!(out, "{}:|", "-".repeat(w + 1));
        }
    }
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

fn tsv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

fn overall_rows(columns: &[Column]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["Model", "Precision", "Recall", "F1 Score"].map(String::from).to_vec();
    let rows = columns
        .iter()
        .map(|c| vec![c.label.clone(), opt_pct(c.precision), opt_pct(c.recall), pct(c.f1)])
        .collect();
    (header, rows)
}

fn technique_rows(columns: &[Column]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["Propaganda Technique".to_string()];
    header.extend(columns.iter().map(|c| c.label.clone()));
    let rows = all_techniques()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut row = vec![t.identifier().to_string()];
            row.extend(columns.iter().map(|c| pct(c.per_label_f1[i])));
            row
        })
        .collect();
    (header, rows)
}

pub fn overall_markdown(columns: &[Column]) -> String {
    let (h, r) = overall_rows(columns);
    markdown(&h, &r)
}

pub fn overall_tsv(columns: &[Column]) -> String {
    let (h, r) = overall_rows(columns);
    tsv(&h, &r)
}

pub fn per_technique_markdown(columns: &[Column]) -> String {
    let (h, r) = technique_rows(columns);
    markdown(&h, &r)
}

pub fn per_technique_tsv(columns: &[Column]) -> String {
    let (h, r) = technique_rows(columns);
    tsv(&h, &r)
}

fn signed(points: f64) -> String {
    // avoid "-0.00" for tiny negative float noise
    let rounded = (points * 100.0).round() / 100.0;
    if rounded == 0.0 {
        "+0.00".to_string()
    } else {
        format!("{rounded:+.2}")
    }
}

pub fn comparison_markdown(cmp: &BaselineComparison) -> String {
    let header = ["Propaganda Technique", cmp.model.label().as_str(), "Baseline", "Delta (points)"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = cmp
        .rows
        .iter()
        .map(|r| vec![r.technique.to_string(), pct(r.model_f1), pct(r.baseline_f1), signed(r.delta_points)])
        .collect();
    let mut out = markdown(&header, &rows);
    let _ = writeln!(
        out,
        "\nAbove baseline on {} of 14 techniques. Overall F1 {} vs {} ({}).",
        cmp.above_baseline,
        pct(cmp.overall_f1),
        pct(BASELINE_F1 / 100.0),
        signed(cmp.overall_delta_points)
    );
    let _ = writeln!(out, "\nNote: {}", cmp.caveat);
    out
}

pub fn comparison_tsv(cmp: &BaselineComparison) -> String {
    let mut out = String::from("technique\tmodel_f1\tbaseline_f1\tdelta_points\n");
    for r in &cmp.rows {
        let _ = writeln!(
            out,
            "{}\t{:.2}\t{:.2}\t{}",
            r.technique,
            r.model_f1 * 100.0,
            r.baseline_f1 * 100.0,
            signed(r.delta_points)
        );
    }
    let _ = writeln!(out, "above_baseline\t{}\t\t", cmp.above_baseline);
    out
}
