//! Instruction templates, token estimates and chunk planning.
//!
//! The output contract the templates ask for is what [`crate::parsing`]
//! understands: one canonical label per line (or `NONE`) for the base
//! pattern, and `LABEL:` / `REASON:` line pairs for chain of thought.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Article;
use crate::exec::Execution;
use crate::techniques::{Technique, TechniqueCard};

/// Context window of the completion-endpoint (GPT-3 class) models.
pub const GPT3_MAX_TOKENS: usize = 2048;
/// Context window of the chat (GPT-4 class) models.
pub const GPT4_MAX_TOKENS: usize = 8192;
/// Smallest article budget a chunk may be planned under.
pub const MIN_CHUNK_TOKENS: usize = 32;
/// Approximate size of the base instruction; outside this window a warning
/// is logged.
pub const EXPECTED_INSTRUCTION_TOKENS: Range<usize> = 600..901;

pub const BASE_CONTRACT: &str =
    "Output format: output one canonical label per line, spelled exactly as in the list above; output NONE if no technique applies.";
pub const COT_CONTRACT: &str =
    "Output format: after your reasoning, for each detected technique output a line \"LABEL: <canonical name>\" followed by a line \"REASON: <one-sentence justification>\"; output NONE if no technique applies.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("technique cards must cover all 14 techniques exactly once: missing {missing:?}, duplicated {duplicated:?}")]
    Cards {
        missing: Vec<Technique>,
        duplicated: Vec<Technique>,
    },
    #[error("instruction of {instruction_tokens} tokens leaves nothing of a {model_max}-token window")]
    InstructionTooLong {
        model_max: usize,
        instruction_tokens: usize,
    },
    #[error("invalid token budget: {0}")]
    InvalidBudget(String),
    #[error("article {0} is empty")]
    EmptyArticle(String),
}

/// Which prompt variant a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptPattern {
    Base,
    ChainOfThought,
    NoInstruction,
}

impl PromptPattern {
    pub const ALL: [PromptPattern; 3] = [
        PromptPattern::Base,
        PromptPattern::ChainOfThought,
        PromptPattern::NoInstruction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptPattern::Base => "base",
            PromptPattern::ChainOfThought => "cot",
            PromptPattern::NoInstruction => "noinstr",
        }
    }

    /// Tokens held back for the completion when planning chunks.
    pub fn default_completion_reserve(self) -> usize {
        match self {
            PromptPattern::ChainOfThought => 512,
            PromptPattern::Base | PromptPattern::NoInstruction => 128,
        }
    }
}

impl std::fmt::Display for PromptPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptPattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(PromptPattern::Base),
            "cot" | "chain-of-thought" | "chainofthought" => Ok(PromptPattern::ChainOfThought),
            "noinstr" | "no-instruction" | "noinstruction" => Ok(PromptPattern::NoInstruction),
            other => Err(format!("unknown prompt pattern {other:?} (base|cot|noinstr)")),
        }
    }
}

/// Token counting strategy. Implementations must be monotone: a substring
/// never estimates higher than the string containing it.
pub trait TokenEstimator: Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(chars / 4)`, 0 for the empty string.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharHeuristic;

impl TokenEstimator for CharHeuristic {
    fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    CharHeuristic.estimate(text)
}

/// Tokens left for article and completion once the instruction is placed.
pub fn remaining_budget(model_max: usize, instruction_tokens: usize) -> Result<usize, PromptError> {
    if instruction_tokens >= model_max {
        return Err(PromptError::InstructionTooLong {
            model_max,
            instruction_tokens,
        });
    }
    Ok(model_max - instruction_tokens)
}

fn check_cards(cards: &[TechniqueCard]) -> Result<(), PromptError> {
    let mut counts = [0usize; Technique::COUNT];
    for c in cards {
        counts[c.technique.index()] += 1;
    }
    let pick = |pred: fn(usize) -> bool| {
        counts
            .iter()
            .enumerate()
            .filter(|(_, n)| pred(**n))
            .filter_map(|(i, _)| Technique::from_index(i))
            .collect::<Vec<_>>()
    };
    let missing = pick(|n| n == 0);
    let duplicated = pick(|n| n > 1);
    if missing.is_empty() && duplicated.is_empty() {
        Ok(())
    } else {
        Err(PromptError::Cards { missing, duplicated })
    }
}

/// Render the instruction for `pattern`. Cards are listed in table order
/// regardless of the order they are passed in. `NoInstruction` renders "".
pub fn build_instruction(pattern: PromptPattern, cards: &[TechniqueCard]) -> Result<String, PromptError> {
    check_cards(cards)?;
    if pattern == PromptPattern::NoInstruction {
        return Ok(String::new());
    }
    let mut ordered: Vec<&TechniqueCard> = cards.iter().collect();
    ordered.sort_by_key(|c| c.technique);

    let mut out = String::new();
    out.push_str(
        "You are an expert analyst of propaganda in news media. You will be given a news article. \
Decide which of the 14 propaganda techniques listed below are used anywhere in the article. \
An article can use several techniques at once, or none at all.\n\n",
    );
    out.push_str("Propaganda techniques, each with its definition and one example:\n\n");
    for (i, c) in ordered.iter().enumerate() {
        let _ = writeln!(out, "{}. {}", i + 1, c.technique);
        let _ = writeln!(out, "Definition: {}", c.definition);
        let _ = writeln!(out, "Example: \"{}\"", c.example);
        out.push('\n');
    }
    match pattern {
        PromptPattern::Base => {
            out.push_str(
                "Only report techniques that actually occur in the article. Use the label \
names exactly as written above, including underscores, hyphens and commas.\n",
            );
            out.push_str(BASE_CONTRACT);
        }
        PromptPattern::ChainOfThought => {
            out.push_str(
                "Think step by step. First reason about the rhetoric of the article: who is \
addressed, which claims are made, and how emotion, authority or repetition are used. Then decide \
which techniques are present, and only label a technique when you can justify it from the text. \
Use the label names exactly as written above, including underscores, hyphens and commas.\n",
            );
            out.push_str(COT_CONTRACT);
        }
        PromptPattern::NoInstruction => unreachable!(),
    }
    Ok(out)
}

/// Instruction and article text joined the way requests and fine-tune
/// prompts carry them.
pub fn join_prompt(instruction: &str, article_text: &str) -> String {
    if instruction.is_empty() {
        article_text.to_string()
    } else {
        format!("{instruction}\n\nArticle:\n{article_text}")
    }
}

/// Tokens consumed by joining glue on top of the instruction itself.
pub fn framing_tokens(instruction: &str) -> usize {
    if instruction.is_empty() {
        0
    } else {
        estimate_tokens("\n\nArticle:\n")
    }
}

/// Log a warning when a base instruction drifts from its expected size.
pub fn check_instruction_size(tokens: usize) -> bool {
    let ok = EXPECTED_INSTRUCTION_TOKENS.contains(&tokens);
    if !ok {
        log::warn!(
            "instruction estimates {tokens} tokens, expected roughly {}..{}",
            EXPECTED_INSTRUCTION_TOKENS.start,
            EXPECTED_INSTRUCTION_TOKENS.end - 1
        );
    }
    ok
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub pattern: PromptPattern,
    pub instruction_text: String,
    pub article_text: String,
    pub token_estimate: usize,
}

impl RenderedPrompt {
    pub fn new(pattern: PromptPattern, instruction_text: &str, article_text: &str) -> Self {
        RenderedPrompt {
            pattern,
            instruction_text: instruction_text.to_string(),
            article_text: article_text.to_string(),
            token_estimate: estimate_tokens(instruction_text) + estimate_tokens(article_text),
        }
    }

    pub fn input_text(&self) -> String {
        join_prompt(&self.instruction_text, &self.article_text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub model_max: usize,
    pub completion_reserve: usize,
    pub instruction_tokens: usize,
}

impl TokenBudget {
    pub fn new(model_max: usize, completion_reserve: usize, instruction_tokens: usize) -> Result<Self, PromptError> {
        if completion_reserve == 0 {
            return Err(PromptError::InvalidBudget("completion reserve must be at least 1".into()));
        }
        if instruction_tokens + completion_reserve >= model_max {
            return Err(PromptError::InvalidBudget(format!(
                "instruction {instruction_tokens} + reserve {completion_reserve} >= window {model_max}"
            )));
        }
        Ok(TokenBudget {
            model_max,
            completion_reserve,
            instruction_tokens,
        })
    }

    /// Article tokens available per chunk.
    pub fn chunk_budget(&self) -> usize {
        self.model_max
            .saturating_sub(self.instruction_tokens)
            .saturating_sub(self.completion_reserve)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    /// Byte range into the article text.
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub token_estimate: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub article_id: String,
    pub budget: usize,
    pub chunks: Vec<Chunk>,
}

impl ChunkPlan {
    /// Concatenate chunk texts back into the article.
    pub fn reconstruct(&self) -> String {
        self.chunks.iter().map(|c| c.text.as_str()).collect()
    }
}

pub fn plan_chunks(article: &Article, budget: &TokenBudget) -> Result<ChunkPlan, PromptError> {
    plan_chunks_with(article, budget, &CharHeuristic)
}

/// Split an article so every chunk fits the per-chunk budget.
///
/// Paragraphs (blank-line separated) are packed greedily; a paragraph that
/// does not fit on its own is split into sentences, packed the same way,
/// and a sentence that still does not fit is hard-cut at the longest
/// fitting character prefix. Pieces of a split unit never merge with
/// neighbouring units, which keeps the chunk count monotone in the budget.
pub fn plan_chunks_with(
    article: &Article,
    budget: &TokenBudget,
    estimator: &dyn TokenEstimator,
) -> Result<ChunkPlan, PromptError> {
    let limit = budget.chunk_budget();
    if limit < MIN_CHUNK_TOKENS {
        return Err(PromptError::InvalidBudget(format!(
            "per-chunk budget {limit} is below the minimum of {MIN_CHUNK_TOKENS}"
        )));
    }
    if article.text.is_empty() {
        return Err(PromptError::EmptyArticle(article.id.clone()));
    }
    let planner = Planner {
        text: &article.text,
        limit,
        estimator,
    };
    let ranges = planner.plan();
    let chunks = ranges
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let text = article.text[r.clone()].to_string();
            Chunk {
                index,
                start: r.start,
                end: r.end,
                token_estimate: estimator.estimate(&text),
                text,
            }
        })
        .collect();
    Ok(ChunkPlan {
        article_id: article.id.clone(),
        budget: limit,
        chunks,
    })
}

/// Plan chunks for many articles.
pub fn plan_corpus(
    articles: &[Article],
    budget: &TokenBudget,
    exec: Execution,
) -> Vec<Result<ChunkPlan, PromptError>> {
    exec.map(articles, |a| plan_chunks(a, budget))
}

#[derive(Clone, Copy)]
enum Level {
    Paragraph,
    Sentence,
}

struct Planner<'a> {
    text: &'a str,
    limit: usize,
    estimator: &'a dyn TokenEstimator,
}

impl Planner<'_> {
    fn fits(&self, r: &Range<usize>) -> bool {
        self.estimator.estimate(&self.text[r.clone()]) <= self.limit
    }

    fn plan(&self) -> Vec<Range<usize>> {
        let whole = 0..self.text.len();
        if self.fits(&whole) {
            return vec![whole];
        }
        self.pack(paragraph_units(self.text, whole), Level::Paragraph)
    }

    fn pack(&self, units: Vec<Range<usize>>, level: Level) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut current: Option<Range<usize>> = None;
        for unit in units {
            if self.fits(&unit) {
                current = match current.take() {
                    Some(cur) if self.fits(&(cur.start..unit.end)) => Some(cur.start..unit.end),
                    Some(cur) => {
                        out.push(cur);
                        Some(unit)
                    }
                    None => Some(unit),
                };
            } else {
                if let Some(cur) = current.take() {
                    out.push(cur);
                }
                match level {
                    Level::Paragraph => {
                        let sentences = sentence_units(self.text, unit);
                        out.extend(self.pack(sentences, Level::Sentence));
                    }
                    Level::Sentence => out.extend(self.hard_cuts(unit)),
                }
            }
        }
        out.extend(current);
        out
    }

    fn hard_cuts(&self, unit: Range<usize>) -> Vec<Range<usize>> {
        let mut bounds: Vec<usize> = self.text[unit.clone()]
            .char_indices()
            .map(|(i, _)| unit.start + i)
            .collect();
        bounds.push(unit.end);
        let mut out = Vec::new();
        let mut from = 0;
        while from + 1 < bounds.len() {
            // Largest j with text[bounds[from]..bounds[j]] fitting; at least one char.
            let (mut lo, mut hi) = (from + 1, bounds.len() - 1);
            while lo < hi {
                let mid = (lo + hi).div_ceil(2);
                if self.fits(&(bounds[from]..bounds[mid])) {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            out.push(bounds[from]..bounds[lo]);
            from = lo;
        }
        out
    }
}

/// Contiguous units covering `range`, each ending after a boundary run.
fn split_after(text: &str, range: Range<usize>, is_boundary_end: impl Fn(&str, usize) -> Option<usize>) -> Vec<Range<usize>> {
    let mut units = Vec::new();
    let mut start = range.start;
    let mut pos = range.start;
    while pos < range.end {
        if let Some(next) = is_boundary_end(&text[..range.end], pos) {
            if next > pos {
                units.push(start..next);
                start = next;
                pos = next;
                continue;
            }
        }
        pos += text[pos..].chars().next().map_or(1, char::len_utf8);
    }
    if start < range.end {
        units.push(start..range.end);
    }
    units
}

/// End of the whitespace run starting at `pos`.
fn whitespace_end(text: &str, pos: usize) -> usize {
    pos + text[pos..]
        .char_indices()
        .find(|(_, c)| !c.is_whitespace())
        .map_or(text.len() - pos, |(i, _)| i)
}

fn paragraph_units(text: &str, range: Range<usize>) -> Vec<Range<usize>> {
    split_after(text, range, |t, pos| {
        if !t[pos..].starts_with('\n') {
            return None;
        }
        let end = whitespace_end(t, pos);
        (t[pos..end].matches('\n').count() >= 2).then_some(end)
    })
}

fn sentence_units(text: &str, range: Range<usize>) -> Vec<Range<usize>> {
    split_after(text, range, |t, pos| {
        let c = t[pos..].chars().next()?;
        if c == '\n' {
            return Some(whitespace_end(t, pos));
        }
        if !matches!(c, '.' | '!' | '?' | '…') {
            return None;
        }
        let mut after = pos + c.len_utf8();
        // closing quotes and brackets stay with the sentence
        while let Some(q) = t[after..].chars().next() {
            if matches!(q, '"' | '\'' | '”' | '’' | ')' | ']') {
                after += q.len_utf8();
            } else {
                break;
            }
        }
        let end = whitespace_end(t, after);
        (end > after).then_some(end)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::techniques::cards;

    fn article(text: &str) -> Article {
        Article {
            id: "1".into(),
            text: text.into(),
        }
    }

    fn budget_for(limit: usize) -> TokenBudget {
        TokenBudget::new(limit + 100, 100, 0).unwrap()
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcdefgh"), 2);
        assert_eq!(estimate_tokens("abcdefghi"), 3);
        assert_eq!(estimate_tokens("éééé"), 1);
    }

    #[test]
    fn remaining_budget_examples() {
        assert_eq!(remaining_budget(2048, 740), Ok(1308));
        assert_eq!(remaining_budget(8192, 740), Ok(7452));
        assert!(remaining_budget(2048, 2048).is_err());
        for x in 0..2048 {
            assert_eq!(remaining_budget(2048, x).unwrap() + x, 2048);
        }
    }

    #[test]
    fn instruction_variants() {
        assert_eq!(build_instruction(PromptPattern::NoInstruction, cards()).unwrap(), "");
        let base = build_instruction(PromptPattern::Base, cards()).unwrap();
        for t in crate::techniques::all_techniques() {
            assert!(base.contains(t.identifier()), "{t}");
        }
        assert!(base.contains("Make America great again!"));
        assert!(base.ends_with(BASE_CONTRACT));
        let tokens = estimate_tokens(&base);
        assert!((600..=900).contains(&tokens), "base instruction estimates {tokens}");
        let cot = build_instruction(PromptPattern::ChainOfThought, cards()).unwrap();
        assert!(cot.contains("LABEL: <canonical name>") && cot.contains("REASON:"));
        assert!(cot.ends_with(COT_CONTRACT));
    }

    #[test]
    fn instruction_rejects_bad_card_sets() {
        let partial = &cards()[..13];
        assert!(matches!(
            build_instruction(PromptPattern::Base, partial),
            Err(PromptError::Cards { ref missing, .. }) if missing == &[Technique::WhataboutismStrawMenRedHerring]
        ));
        let mut dup = cards().to_vec();
        dup.push(cards()[0].clone());
        assert!(build_instruction(PromptPattern::NoInstruction, &dup).is_err());
    }

    #[test]
    fn budget_validation() {
        assert!(TokenBudget::new(2048, 0, 700).is_err());
        assert!(TokenBudget::new(2048, 1348, 700).is_err());
        let b = TokenBudget::new(2048, 128, 740).unwrap();
        assert_eq!(b.chunk_budget(), 1180);
        let tiny = TokenBudget::new(2048, 2000, 20).unwrap();
        assert!(matches!(plan_chunks(&article("x"), &tiny), Err(PromptError::InvalidBudget(_))));
    }

    #[test]
    fn same_article_across_context_windows() {
        // 300 paragraphs of 40 chars = 3000 tokens
        let text = format!("{}\n\n", "w".repeat(38)).repeat(300);
        let wide = TokenBudget::new(8192, 512, 740).unwrap();
        assert_eq!(plan_chunks(&article(&text), &wide).unwrap().chunks.len(), 1);
        let narrow = TokenBudget::new(2048, 128, 740).unwrap();
        let plan = plan_chunks(&article(&text), &narrow).unwrap();
        assert!(plan.chunks.len() >= 3);
        assert_eq!(plan.reconstruct(), text);
    }

    #[test]
    fn fitting_article_is_one_chunk() {
        let text = "a".repeat(2000);
        let plan = plan_chunks(&article(&text), &TokenBudget::new(2048, 1, 739).unwrap()).unwrap();
        assert_eq!(plan.chunks.len(), 1);
        assert_eq!(plan.chunks[0].text, text);
    }

    #[test]
    fn three_paragraphs_of_700() {
        // 2800 chars = 700 tokens each, incl. the blank-line separator
        let p = |c: char| format!("{}\n\n", c.to_string().repeat(2798));
        let text = format!("{}{}{}", p('a'), p('b'), p('c'));
        let b = TokenBudget::new(2048, 1, 739).unwrap();
        assert_eq!(b.chunk_budget(), 1308);
        let plan = plan_chunks(&article(&text), &b).unwrap();
        let sizes: Vec<usize> = plan.chunks.iter().map(|c| c.token_estimate).collect();
        assert_eq!(sizes, vec![700, 700, 700]);
        assert_eq!(plan.reconstruct(), text);
    }

    #[test]
    fn oversized_paragraph_falls_back() {
        let sentence = "This sentence carries a claim about the world. ";
        let text = sentence.repeat(170); // ~2000 tokens, no blank lines
        let b = TokenBudget::new(2048, 1, 739).unwrap();
        let plan = plan_chunks(&article(&text), &b).unwrap();
        assert!(plan.chunks.len() >= 2);
        assert!(plan.chunks.iter().all(|c| c.token_estimate <= 1308 && !c.text.is_empty()));
        assert_eq!(plan.reconstruct(), text);
        // cuts happen at sentence ends
        assert!(plan.chunks[..plan.chunks.len() - 1].iter().all(|c| c.text.ends_with(". ")));

        let blob = "x".repeat(9000);
        let plan = plan_chunks(&article(&blob), &b).unwrap();
        assert_eq!(plan.chunks.len(), 2);
        assert_eq!(plan.chunks[0].text.len(), 1308 * 4);
        assert_eq!(plan.reconstruct(), blob);
    }

    #[test]
    fn split_pieces_do_not_merge_with_neighbours() {
        // small, oversized, small: the oversized middle paragraph is cut on
        // its own and the outer paragraphs stay separate
        let text = format!("aaaa\n\n{}\n\nbbbb", "y".repeat(200));
        let plan = plan_chunks(&article(&text), &budget_for(32)).unwrap();
        assert_eq!(plan.chunks[0].text, "aaaa\n\n");
        assert_eq!(plan.chunks.last().unwrap().text, "bbbb");
        assert_eq!(plan.reconstruct(), text);
    }

    #[test]
    fn sentence_units_keep_closing_quotes() {
        let t = "He said \"no.\" Then left!  Why?\nNext";
        let units: Vec<&str> = sentence_units(t, 0..t.len()).into_iter().map(|r| &t[r]).collect();
        assert_eq!(units, vec!["He said \"no.\" ", "Then left!  ", "Why?\n", "Next"]);
        let p = "A\n\nB\n \nC\nD";
        let paras: Vec<&str> = paragraph_units(p, 0..p.len()).into_iter().map(|r| &p[r]).collect();
        assert_eq!(paras, vec!["A\n\n", "B\n \n", "C\nD"]);
    }

    #[test]
    fn rendered_prompt_accounting() {
        let r = RenderedPrompt::new(PromptPattern::Base, "instruction", "body text");
        assert_eq!(r.token_estimate, estimate_tokens("instruction") + estimate_tokens("body text"));
        assert_eq!(r.input_text(), "instruction\n\nArticle:\nbody text");
        assert_eq!(join_prompt("", "body"), "body");
    }
}
