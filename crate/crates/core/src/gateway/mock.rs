use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendKind, CallOutcome, CompletionBackend, CompletionRequest, CompletionResponse, FinishReason, GatewayError};
use crate::prompting::estimate_tokens;

/// Scripted response: the first rule whose `contains` substring occurs in
/// the request input wins. An empty `contains` matches everything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub text: String,
    #[serde(default = "default_finish")]
    pub finish_reason: FinishReason,
}

fn default_finish() -> FinishReason {
    FinishReason::Stop
}

impl MockRule {
    pub fn new(contains: &str, text: &str, finish_reason: FinishReason) -> Self {
        MockRule {
            contains: contains.into(),
            text: text.into(),
            finish_reason,
        }
    }

    pub fn always(text: &str) -> Self {
        Self::new("", text, FinishReason::Stop)
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    rules: Vec<MockRule>,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockBackend { rules }
    }

    /// Rules from a JSON Lines file, one [`MockRule`] object per line.
    pub fn from_jsonl(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::io(path, e))?;
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule = serde_json::from_str(line).map_err(|e| GatewayError::Format {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })?;
            rules.push(rule);
        }
        Ok(Self::new(rules))
    }
}

impl CompletionBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn call(&self, request: &CompletionRequest) -> CallOutcome {
        let result = self
            .rules
            .iter()
            .find(|r| request.input_text.contains(&r.contains))
            .map(|r| CompletionResponse {
                text: r.text.clone(),
                finish_reason: r.finish_reason,
                prompt_tokens: estimate_tokens(&request.input_text) as u64,
                completion_tokens: estimate_tokens(&r.text) as u64,
            })
            .ok_or_else(|| GatewayError::NoMockRule(request.request_hash.clone()));
        CallOutcome { result, attempts: 1 }
    }
}
