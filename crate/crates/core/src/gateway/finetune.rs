use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::corpus::{compare_ids, Article, GoldLabels};
use crate::parsing::NONE_SENTINEL;
use crate::prompting::{
    build_instruction, estimate_tokens, framing_tokens, join_prompt, plan_chunks, PromptPattern, TokenBudget,
    GPT3_MAX_TOKENS,
};
use crate::techniques::{Technique, TechniqueCard};

/// Ends every fine-tune prompt.
pub const FINETUNE_SEPARATOR: &str = "\n\n###\n\n";
/// Ends every fine-tune completion; also sent as the stop sequence.
pub const FINETUNE_STOP: &str = " END";
/// Stand-in rationale for chain-of-thought completions; the corpus has no
/// gold rationales.
pub const COT_PLACEHOLDER_REASON: &str = "<span evidence in article>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub prompt: String,
    pub completion: String,
}

/// Target completion for a gold label set.
pub fn finetune_completion(pattern: PromptPattern, labels: &BTreeSet<Technique>) -> String {
    let body = if labels.is_empty() {
        NONE_SENTINEL.to_string()
    } else {
        match pattern {
            PromptPattern::ChainOfThought => labels
                .iter()
                .map(|t| format!("LABEL: {t}\nREASON: {COT_PLACEHOLDER_REASON}"))
                .collect::<Vec<_>>()
                .join("\n"),
            PromptPattern::Base | PromptPattern::NoInstruction => {
                labels.iter().map(|t| t.identifier()).collect::<Vec<_>>().join("\n")
            }
        }
    };
    format!(" {body}{FINETUNE_STOP}")
}

/// One prompt/completion pair per article chunk, ordered by article id and
/// chunk index. Chunks are planned under the 2048-token window with the
/// pattern's completion reserve; completions carry the article-level gold
/// set.
pub fn export_finetune(
    articles: &[Article],
    gold: &[GoldLabels],
    pattern: PromptPattern,
    cards: &[TechniqueCard],
) -> Result<Vec<FinetuneRecord>, GatewayError> {
    if articles.is_empty() {
        return Err(GatewayError::Export("split has no articles".into()));
    }
    let gold: HashMap<&str, &BTreeSet<Technique>> =
        gold.iter().map(|g| (g.article_id.as_str(), &g.labels)).collect();
    let instruction = build_instruction(pattern, cards).map_err(|e| GatewayError::Export(e.to_string()))?;
    let overhead = estimate_tokens(&instruction) + framing_tokens(&instruction) + estimate_tokens(FINETUNE_SEPARATOR);
    let budget = TokenBudget::new(GPT3_MAX_TOKENS, pattern.default_completion_reserve(), overhead)
        .map_err(|e| GatewayError::Export(e.to_string()))?;

    let mut ordered: Vec<&Article> = articles.iter().collect();
    ordered.sort_by(|a, b| compare_ids(&a.id, &b.id));
    let mut records = Vec::new();
    for article in ordered {
        let labels = gold
            .get(article.id.as_str())
            .ok_or_else(|| GatewayError::Export(format!("article {} has no gold labels", article.id)))?;
        let plan = plan_chunks(article, &budget).map_err(|e| GatewayError::Export(format!("article {}: {e}", article.id)))?;
        let completion = finetune_completion(pattern, labels);
        for chunk in &plan.chunks {
            if chunk.token_estimate > plan.budget {
                return Err(GatewayError::Export(format!(
                    "article {} chunk {} estimates {} tokens, over the {} budget",
                    article.id, chunk.index, chunk.token_estimate, plan.budget
                )));
            }
            records.push(FinetuneRecord {
                prompt: format!("{}{FINETUNE_SEPARATOR}", join_prompt(&instruction, &chunk.text)),
                completion: completion.clone(),
            });
        }
    }
    Ok(records)
}

/// Write records as JSON Lines (one `{"prompt", "completion"}` object per
/// line) through a temporary file.
pub fn write_finetune_jsonl(records: &[FinetuneRecord], path: &Path) -> Result<(), GatewayError> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| GatewayError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, out).map_err(|e| GatewayError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| GatewayError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::techniques::cards;

    fn article(id: &str, text: &str) -> Article {
        Article {
            id: id.into(),
            text: text.into(),
        }
    }

    fn gold(id: &str, labels: &[Technique]) -> GoldLabels {
        GoldLabels {
            article_id: id.into(),
            labels: labels.iter().copied().collect(),
        }
    }

    #[test]
    fn noinstruction_single_chunk() {
        let recs = export_finetune(
            &[article("1", "Article body.")],
            &[gold("1", &[Technique::LoadedLanguage])],
            PromptPattern::NoInstruction,
            cards(),
        )
        .unwrap();
        assert_eq!(
            recs,
            vec![FinetuneRecord {
                prompt: "Article body.\n\n###\n\n".into(),
                completion: " Loaded_Language END".into(),
            }]
        );
    }

    #[test]
    fn empty_gold_renders_none() {
        let recs = export_finetune(&[article("1", "x")], &[gold("1", &[])], PromptPattern::Base, cards()).unwrap();
        assert_eq!(recs[0].completion, " NONE END");
        assert!(recs[0].prompt.contains("Appeal_to_Authority"));
        assert!(recs[0].prompt.ends_with("Article:\nx\n\n###\n\n"));
    }

    #[test]
    fn cot_completion_format() {
        let labels = BTreeSet::from([Technique::Slogans, Technique::Doubt]);
        assert_eq!(
            finetune_completion(PromptPattern::ChainOfThought, &labels),
            " LABEL: Doubt\nREASON: <span evidence in article>\nLABEL: Slogans\nREASON: <span evidence in article> END"
        );
        assert_eq!(finetune_completion(PromptPattern::Base, &labels), " Doubt\nSlogans END");
    }

    #[test]
    fn ordering_chunking_and_errors() {
        let long: String = "Sentence about policy and blame. ".repeat(300);
        let arts = vec![article("20", "b"), article("3", &long)];
        let golds = vec![gold("20", &[]), gold("3", &[Technique::Doubt])];
        let recs = export_finetune(&arts, &golds, PromptPattern::Base, cards()).unwrap();
        assert!(recs.len() > 2);
        // id 3 sorts before id 20 numerically
        assert!(recs[0].completion.contains("Doubt"));
        assert_eq!(recs.last().unwrap().completion, " NONE END");
        assert!(export_finetune(&[], &[], PromptPattern::Base, cards()).is_err());
        assert!(export_finetune(&arts, &golds[..1], PromptPattern::Base, cards()).is_err());
    }
}
