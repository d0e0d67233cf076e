//! Completion text to label sets, rationales and anomaly findings.
//!
//! Parsers never fail: anything that cannot be used becomes an [`Anomaly`]
//! so a run can keep scoring. Labels are split on newlines only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::gateway::FinishReason;
use crate::prompting::PromptPattern;
use crate::techniques::{self, Technique};

/// A label seen more than this many times in one completion is reported
/// as a repetition loop.
pub const DEFAULT_REPETITION_THRESHOLD: usize = 2;

pub const NONE_SENTINEL: &str = "NONE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyKind {
    UnknownLabel,
    Repetition,
    Truncation,
    EmptyOutput,
    MalformedLine,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub detail: String,
}

impl Anomaly {
    fn new(kind: AnomalyKind, detail: impl Into<String>) -> Self {
        Anomaly {
            kind,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCompletion {
    pub labels: BTreeSet<Technique>,
    /// Chain-of-thought only. Keys are always a subset of `labels`; a label
    /// without a REASON line maps to "".
    pub rationales: BTreeMap<Technique, String>,
    pub anomalies: Vec<Anomaly>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    pub repetition_threshold: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            repetition_threshold: DEFAULT_REPETITION_THRESHOLD,
        }
    }
}

/// Strip list bullets and numbering such as `-`, `*`, `•`, `1.`, `2)`, `(3)`.
fn strip_list_marker(line: &str) -> &str {
    let mut s = line.trim_start();
    loop {
        let before = s;
        if let Some(rest) = s.strip_prefix(['-', '*', '•', '+', '>']) {
            s = rest.trim_start();
        }
        let digits = s.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 {
            let rest = &s[digits..];
            if let Some(r) = rest.strip_prefix(['.', ')', ':']) {
                s = r.trim_start();
            }
        } else if let Some(inner) = s.strip_prefix('(') {
            let d = inner.bytes().take_while(u8::is_ascii_digit).count();
            if d > 0 {
                if let Some(r) = inner[d..].strip_prefix(')') {
                    s = r.trim_start();
                }
            }
        }
        if s == before {
            return s;
        }
    }
}

fn is_none_sentinel(line: &str) -> bool {
    line.trim_matches(|c: char| !c.is_alphanumeric())
        .eq_ignore_ascii_case(NONE_SENTINEL)
}

/// Split `LABEL: x` / `REASON: y` keys case-insensitively, tolerating
/// markdown emphasis around the key.
fn keyed<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let s = strip_list_marker(line).trim_start_matches(['*', '_']);
    let head = s.get(..key.len())?;
    if !head.eq_ignore_ascii_case(key) {
        return None;
    }
    let rest = s[key.len()..].trim_start_matches(['*', '_']).trim_start();
    let rest = rest.strip_prefix(':')?;
    Some(rest.trim_start_matches(['*', '_']).trim())
}

struct Accumulator {
    parsed: ParsedCompletion,
    counts: BTreeMap<Technique, usize>,
    saw_none: bool,
}

impl Accumulator {
    fn new() -> Self {
        Accumulator {
            parsed: ParsedCompletion::default(),
            counts: BTreeMap::new(),
            saw_none: false,
        }
    }

    fn label(&mut self, t: Technique) {
        self.parsed.labels.insert(t);
        *self.counts.entry(t).or_default() += 1;
    }

    fn anomaly(&mut self, kind: AnomalyKind, detail: impl Into<String>) {
        self.parsed.anomalies.push(Anomaly::new(kind, detail));
    }

    fn finish(mut self, text: &str, finish: FinishReason, opts: ParseOptions) -> ParsedCompletion {
        if text.trim().is_empty() {
            self.anomaly(AnomalyKind::EmptyOutput, "completion is empty");
        }
        if self.saw_none && !self.parsed.labels.is_empty() {
            self.anomaly(AnomalyKind::MalformedLine, "NONE alongside technique labels");
        }
        let repeated: Vec<(Technique, usize)> = self
            .counts
            .iter()
            .filter(|(_, n)| **n > opts.repetition_threshold)
            .map(|(t, n)| (*t, *n))
            .collect();
        for (t, n) in repeated {
            self.anomaly(AnomalyKind::Repetition, format!("{t} x{n}"));
        }
        if finish == FinishReason::Length {
            self.anomaly(AnomalyKind::Truncation, "finish_reason=length");
        }
        self.parsed
    }
}

pub fn parse_base(text: &str, finish: FinishReason) -> ParsedCompletion {
    parse_base_with(text, finish, ParseOptions::default())
}

/// One label per line; `NONE` alone means no technique.
pub fn parse_base_with(text: &str, finish: FinishReason, opts: ParseOptions) -> ParsedCompletion {
    let mut acc = Accumulator::new();
    for raw in text.lines() {
        let line = strip_list_marker(raw).trim();
        if line.trim_matches(|c: char| !c.is_alphanumeric()).is_empty() {
            continue;
        }
        if is_none_sentinel(line) {
            acc.saw_none = true;
            continue;
        }
        match techniques::normalize(line) {
            Some(t) => acc.label(t),
            None => acc.anomaly(AnomalyKind::UnknownLabel, line),
        }
    }
    acc.finish(text, finish, opts)
}

pub fn parse_cot(text: &str, finish: FinishReason) -> ParsedCompletion {
    parse_cot_with(text, finish, ParseOptions::default())
}

/// `LABEL:` lines, each optionally followed by a `REASON:` line. Any other
/// text is treated as free reasoning and ignored.
pub fn parse_cot_with(text: &str, finish: FinishReason, opts: ParseOptions) -> ParsedCompletion {
    enum Pending {
        Nothing,
        Known(Technique),
        Dropped,
    }
    let mut acc = Accumulator::new();
    let mut pending = Pending::Nothing;
    let close = |acc: &mut Accumulator, pending: &mut Pending| {
        if let Pending::Known(t) = std::mem::replace(pending, Pending::Nothing) {
            acc.parsed.rationales.entry(t).or_default();
            acc.anomaly(AnomalyKind::MalformedLine, format!("LABEL {t} has no REASON line"));
        }
    };
    for raw in text.lines() {
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(value) = keyed(raw, "LABEL") {
            close(&mut acc, &mut pending);
            if is_none_sentinel(value) {
                acc.saw_none = true;
                continue;
            }
            match techniques::normalize(value) {
                Some(t) => {
                    acc.label(t);
                    pending = Pending::Known(t);
                }
                None => {
                    acc.anomaly(AnomalyKind::UnknownLabel, value);
                    pending = Pending::Dropped;
                }
            }
        } else if let Some(reason) = keyed(raw, "REASON") {
            match std::mem::replace(&mut pending, Pending::Nothing) {
                Pending::Known(t) => {
                    let slot = acc.parsed.rationales.entry(t).or_default();
                    if slot.is_empty() {
                        *slot = reason.to_string();
                    }
                }
                Pending::Dropped => {}
                Pending::Nothing => acc.anomaly(AnomalyKind::MalformedLine, format!("REASON without LABEL: {reason}")),
            }
        } else if matches!(pending, Pending::Nothing) && is_none_sentinel(strip_list_marker(raw)) {
            acc.saw_none = true;
        } else {
            // free reasoning text; a dangling LABEL stays open until the next key line
        }
    }
    close(&mut acc, &mut pending);
    acc.finish(text, finish, opts)
}

/// Remove the fine-tune stop marker a completion-endpoint model may echo.
pub fn strip_stop_marker(text: &str) -> &str {
    let trimmed = text.trim_end();
    match trimmed.strip_suffix("END") {
        Some(rest) if rest.is_empty() || rest.ends_with(char::is_whitespace) => rest,
        _ => text,
    }
}

/// Parse according to the prompt pattern that produced the completion.
pub fn parse_for(pattern: PromptPattern, text: &str, finish: FinishReason, opts: ParseOptions) -> ParsedCompletion {
    match pattern {
        PromptPattern::ChainOfThought => parse_cot_with(text, finish, opts),
        PromptPattern::Base | PromptPattern::NoInstruction => parse_base_with(text, finish, opts),
    }
}

/// Parse many completions.
pub fn parse_batch(
    pattern: PromptPattern,
    completions: &[(String, FinishReason)],
    exec: Execution,
) -> Vec<ParsedCompletion> {
    exec.map(completions, |(text, finish)| {
        parse_for(pattern, text, *finish, ParseOptions::default())
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot aggregate an empty list of chunk completions")]
pub struct EmptyAggregate;

/// Union of chunk labels; first non-empty rationale per technique in chunk
/// order; anomalies concatenated in chunk order.
pub fn aggregate_chunks(parts: &[ParsedCompletion]) -> Result<ParsedCompletion, EmptyAggregate> {
    if parts.is_empty() {
        return Err(EmptyAggregate);
    }
    let mut out = ParsedCompletion::default();
    for part in parts {
        out.labels.extend(part.labels.iter().copied());
        for (t, reason) in &part.rationales {
            let slot = out.rationales.entry(*t).or_default();
            if slot.is_empty() {
                slot.clone_from(reason);
            }
        }
        out.anomalies.extend(part.anomalies.iter().cloned());
    }
    Ok(out)
}
