use std::time::Duration;

use serde_json::{json, Value};

use super::retry::{parse_retry_after, RetryPolicy};
use super::{
    BackendKind, CallOutcome, CompletionBackend, CompletionRequest, CompletionResponse, EndpointKind,
    FinishReason, GatewayError, FINETUNE_STOP,
};

pub const API_KEY_ENV: &str = "PROP_PROBE_API_KEY";
pub const BASE_URL_ENV: &str = "PROP_PROBE_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com";

/// OpenAI-compatible HTTP backend (`/v1/chat/completions` and
/// `/v1/completions`) with bounded retries on 429, 5xx and transport
/// errors.
#[derive(Debug, Clone)]
pub struct LiveBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
    policy: RetryPolicy,
}

impl LiveBackend {
    pub fn new(base_url: &str, api_key: &str, policy: RetryPolicy) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| GatewayError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(LiveBackend {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            policy,
        })
    }

    /// Key from `PROP_PROBE_API_KEY`; base URL from the argument, then
    /// `PROP_PROBE_BASE_URL`, then the provider default.
    pub fn from_env(base_url: Option<&str>, policy: RetryPolicy) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| GatewayError::MissingApiKey)?;
        let url = match base_url {
            Some(u) => u.to_string(),
            None => std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string()),
        };
        Self::new(&url, &key, policy)
    }

    fn endpoint(&self, kind: EndpointKind) -> String {
        match kind {
            EndpointKind::Chat => format!("{}/v1/chat/completions", self.base_url),
            EndpointKind::Completion => format!("{}/v1/completions", self.base_url),
        }
    }

    fn body(request: &CompletionRequest) -> Value {
        match request.model.endpoint_kind {
            EndpointKind::Chat => json!({
                "model": request.model.name,
                "messages": [{"role": "user", "content": request.input_text}],
                "temperature": request.temperature,
                "max_tokens": request.max_completion_tokens,
            }),
            EndpointKind::Completion => json!({
                "model": request.model.name,
                "prompt": request.input_text,
                "temperature": request.temperature,
                "max_tokens": request.max_completion_tokens,
                "stop": [FINETUNE_STOP],
            }),
        }
    }

    fn decode(kind: EndpointKind, body: &str) -> Result<CompletionResponse, GatewayError> {
        let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
        let choice = v
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
        let text = match kind {
            EndpointKind::Chat => choice.pointer("/message/content"),
            EndpointKind::Completion => choice.get("text"),
        }
        .map(|t| t.as_str().unwrap_or_default().to_string())
        .ok_or_else(|| GatewayError::MalformedResponse("choice carries no text".into()))?;
        let usage = |key: &str| v.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(0);
        Ok(CompletionResponse {
            text,
            finish_reason: FinishReason::from_wire(choice.get("finish_reason").and_then(Value::as_str)),
            prompt_tokens: usage("prompt_tokens"),
            completion_tokens: usage("completion_tokens"),
        })
    }
}

enum AttemptError {
    Retryable { error: GatewayError, hint: Option<Duration> },
    Fatal(GatewayError),
}

impl LiveBackend {
    fn attempt(&self, request: &CompletionRequest, attempt: u32) -> Result<CompletionResponse, AttemptError> {
        let sent = self
            .client
            .post(self.endpoint(request.model.endpoint_kind))
            .bearer_auth(&self.api_key)
            .json(&Self::body(request))
            .send();
        let resp = match sent {
            Ok(r) => r,
            Err(e) => {
                return Err(AttemptError::Retryable {
                    error: GatewayError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    },
                    hint: None,
                })
            }
        };
        let status = resp.status().as_u16();
        let hint = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|h| h.to_str().ok())
            .and_then(parse_retry_after);
        let body = resp.text().map_err(|e| AttemptError::Retryable {
            error: GatewayError::Transport {
                attempts: attempt,
                message: e.to_string(),
            },
            hint: None,
        })?;
        match status {
            200..=299 => Self::decode(request.model.endpoint_kind, &body).map_err(AttemptError::Fatal),
            429 => Err(AttemptError::Retryable {
                error: GatewayError::RateLimited { attempts: attempt },
                hint,
            }),
            500..=599 => Err(AttemptError::Retryable {
                error: GatewayError::Status { status, body },
                hint,
            }),
            _ => Err(AttemptError::Fatal(GatewayError::Status { status, body })),
        }
    }
}

impl CompletionBackend for LiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn call(&self, request: &CompletionRequest) -> CallOutcome {
        let max = self.policy.max_attempts.max(1);
        let mut delay = Duration::ZERO;
        let mut attempt = 1;
        loop {
            match self.attempt(request, attempt) {
                Ok(response) => {
                    return CallOutcome {
                        result: Ok(response),
                        attempts: attempt,
                    }
                }
                Err(AttemptError::Fatal(error)) => {
                    return CallOutcome {
                        result: Err(error),
                        attempts: attempt,
                    }
                }
                Err(AttemptError::Retryable { error, hint }) => {
                    if attempt >= max {
                        return CallOutcome {
                            result: Err(error),
                            attempts: attempt,
                        };
                    }
                    delay = self.policy.delay(attempt, delay, hint);
                    log::debug!("attempt {attempt} failed ({error}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}
