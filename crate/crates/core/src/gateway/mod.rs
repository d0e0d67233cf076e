//! Completion endpoints behind one interface.
//!
//! A [`Gateway`] wraps a [`CompletionBackend`] (live HTTP, fixture replay or
//! scripted mock), enforces the temperature-0 contract, bounds in-flight
//! calls, appends every call to a JSON Lines run log and optionally records
//! fixtures.

mod finetune;
mod live;
mod mock;
mod replay;
mod retry;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use finetune::{
    export_finetune, finetune_completion, write_finetune_jsonl, FinetuneRecord, COT_PLACEHOLDER_REASON,
    FINETUNE_SEPARATOR, FINETUNE_STOP,
};
pub use live::{LiveBackend, API_KEY_ENV, BASE_URL_ENV, DEFAULT_BASE_URL};
pub use mock::{MockBackend, MockRule};
pub use replay::{FixtureStore, ReplayBackend};
pub use retry::{parse_retry_after, RetryPolicy};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("pipeline requests must use temperature 0, got {0}")]
    NonZeroTemperature(f64),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("environment variable {API_KEY_ENV} is not set")]
    MissingApiKey,
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("rate limited on all {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("no fixture recorded for request {0}")]
    MissingFixture(String),
    #[error("fixture {0} already recorded with a different response")]
    FixtureExists(String),
    #[error("no mock rule matches request {0}")]
    NoMockRule(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("fine-tune export: {0}")]
    Export(String),
}

impl GatewayError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        GatewayError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    Chat,
    Completion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub max_tokens: usize,
    pub endpoint_kind: EndpointKind,
}

impl ModelSpec {
    pub fn new(name: &str, max_tokens: usize, endpoint_kind: EndpointKind) -> Result<Self, GatewayError> {
        if max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("model max_tokens must be positive".into()));
        }
        if name.is_empty() {
            return Err(GatewayError::InvalidRequest("model name is empty".into()));
        }
        Ok(ModelSpec {
            name: name.to_string(),
            max_tokens,
            endpoint_kind,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn from_wire(s: Option<&str>) -> Self {
        match s {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: ModelSpec,
    pub input_text: String,
    pub temperature: f64,
    pub max_completion_tokens: usize,
    pub request_hash: String,
}

/// SHA-256 over the length-prefixed model name, input, temperature bits and
/// completion limit, as lowercase hex.
pub fn request_hash(model_name: &str, input_text: &str, temperature: f64, max_completion_tokens: usize) -> String {
    let mut hasher = Sha256::new();
    for field in [model_name.as_bytes(), input_text.as_bytes()] {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field);
    }
    hasher.update(temperature.to_bits().to_le_bytes());
    hasher.update((max_completion_tokens as u64).to_le_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl CompletionRequest {
    pub fn new(model: ModelSpec, input_text: String, temperature: f64, max_completion_tokens: usize) -> Self {
        let request_hash = request_hash(&model.name, &input_text, temperature, max_completion_tokens);
        CompletionRequest {
            model,
            input_text,
            temperature,
            max_completion_tokens,
            request_hash,
        }
    }

    /// Request as the pipeline issues it: temperature 0.
    pub fn deterministic(model: ModelSpec, input_text: String, max_completion_tokens: usize) -> Self {
        Self::new(model, input_text, 0.0, max_completion_tokens)
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature != 0.0 {
            return Err(GatewayError::NonZeroTemperature(self.temperature));
        }
        if self.max_completion_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_completion_tokens must be positive".into()));
        }
        let expected = request_hash(&self.model.name, &self.input_text, self.temperature, self.max_completion_tokens);
        if expected != self.request_hash {
            return Err(GatewayError::InvalidRequest("request_hash does not match request fields".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Replay,
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendKind::Live),
            "replay" => Ok(BackendKind::Replay),
            "mock" => Ok(BackendKind::Mock),
            other => Err(format!("unknown backend {other:?} (live|replay|mock)")),
        }
    }
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Live => "live",
            BackendKind::Replay => "replay",
            BackendKind::Mock => "mock",
        }
    }
}

/// Result of one backend call plus the number of wire attempts it took.
#[derive(Debug)]
pub struct CallOutcome {
    pub result: Result<CompletionResponse, GatewayError>,
    pub attempts: u32,
}

pub trait CompletionBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn call(&self, request: &CompletionRequest) -> CallOutcome;
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub timestamp: String,
    pub request_hash: String,
    pub model: String,
    pub backend: BackendKind,
    pub temperature: f64,
    pub attempts: u32,
    pub finish_reason: Option<FinishReason>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub text: Option<String>,
    pub error: Option<String>,
}

impl LogEntry {
    /// The response this entry recorded, if the call succeeded.
    pub fn response(&self) -> Option<CompletionResponse> {
        if self.error.is_some() {
            return None;
        }
        Some(CompletionResponse {
            text: self.text.clone()?,
            finish_reason: self.finish_reason?,
            prompt_tokens: self.prompt_tokens.unwrap_or(0),
            completion_tokens: self.completion_tokens.unwrap_or(0),
        })
    }
}

/// Append-only JSON Lines log; appends are serialized through a mutex so
/// every line is a complete record.
#[derive(Debug)]
pub struct RunLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl RunLog {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::io(path, e))?;
        Ok(RunLog {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &LogEntry) -> Result<(), GatewayError> {
        let mut line = serde_json::to_string(entry).map_err(|e| GatewayError::Format {
            path: self.path.clone(),
            message: e.to_string(),
        })?;
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| GatewayError::io(&self.path, e))
    }

    /// Read all complete entries; a torn final line (from an interrupted
    /// write) is skipped.
    pub fn read_entries(path: &Path) -> Result<Vec<LogEntry>, GatewayError> {
        if !path.exists() {
            return Ok(Vec::new());
        }
        let file = File::open(path).map_err(|e| GatewayError::io(path, e))?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| GatewayError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(entry) = serde_json::from_str::<LogEntry>(&line) {
                entries.push(entry);
            }
        }
        Ok(entries)
    }
}

/// Counting semaphore bounding concurrent backend calls.
#[derive(Debug)]
struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(limit: usize) -> Self {
        Limiter {
            slots: Mutex::new(limit.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut slots = self.slots.lock().unwrap_or_else(|p| p.into_inner());
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap_or_else(|p| p.into_inner());
        }
        *slots -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

pub const DEFAULT_CONCURRENCY: usize = 4;

pub struct Gateway {
    backend: Box<dyn CompletionBackend>,
    log: Option<RunLog>,
    recorder: Option<(FixtureStore, bool)>,
    limiter: Limiter,
}

impl Gateway {
    pub fn new(backend: Box<dyn CompletionBackend>) -> Self {
        Gateway {
            backend,
            log: None,
            recorder: None,
            limiter: Limiter::new(DEFAULT_CONCURRENCY),
        }
    }

    pub fn with_log(mut self, log: RunLog) -> Self {
        self.log = Some(log);
        self
    }

    /// Record every successful response into `store`.
    pub fn with_recorder(mut self, store: FixtureStore, overwrite: bool) -> Self {
        self.recorder = Some((store, overwrite));
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.limiter = Limiter::new(limit);
        self
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn log(&self) -> Option<&RunLog> {
        self.log.as_ref()
    }

    /// Issue one request. Precondition violations are rejected before any
    /// transport; everything else is logged before returning.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        let outcome = {
            let _permit = self.limiter.acquire();
            self.backend.call(request)
        };
        if let Some(log) = &self.log {
            let (ok, err) = match &outcome.result {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            log.append(&LogEntry {
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                request_hash: request.request_hash.clone(),
                model: request.model.name.clone(),
                backend: self.backend.kind(),
                temperature: request.temperature,
                attempts: outcome.attempts,
                finish_reason: ok.map(|r| r.finish_reason),
                prompt_tokens: ok.map(|r| r.prompt_tokens),
                completion_tokens: ok.map(|r| r.completion_tokens),
                text: ok.map(|r| r.text.clone()),
                error: err,
            })?;
        }
        let response = outcome.result?;
        if let Some((store, overwrite)) = &self.recorder {
            store.record_fixture(request, &response, *overwrite)?;
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gpt4() -> ModelSpec {
        ModelSpec::new("gpt-4", 8192, EndpointKind::Chat).unwrap()
    }

    #[test]
    fn hash_is_pure_and_field_sensitive() {
        let a = request_hash("gpt-4", "text", 0.0, 128);
        assert_eq!(a, request_hash("gpt-4", "text", 0.0, 128));
        assert_eq!(a.len(), 64);
        assert_ne!(a, request_hash("gpt-4", "text", 0.0, 129));
        assert_ne!(a, request_hash("gpt-4", "text", 0.7, 128));
        assert_ne!(a, request_hash("gpt-4", "text!", 0.0, 128));
        assert_ne!(a, request_hash("gpt-3", "text", 0.0, 128));
        // length prefixes keep field boundaries unambiguous
        assert_ne!(request_hash("ab", "c", 0.0, 1), request_hash("a", "bc", 0.0, 1));
    }

    #[test]
    fn nonzero_temperature_rejected_before_transport() {
        let gw = Gateway::new(Box::new(MockBackend::new(vec![MockRule::always("Doubt")])));
        let req = CompletionRequest::new(gpt4(), "x".into(), 0.7, 16);
        assert!(matches!(gw.complete(&req), Err(GatewayError::NonZeroTemperature(t)) if t == 0.7));
        let ok = CompletionRequest::deterministic(gpt4(), "x".into(), 16);
        assert_eq!(gw.complete(&ok).unwrap().text, "Doubt");
    }

    #[test]
    fn tampered_hash_rejected() {
        let gw = Gateway::new(Box::new(MockBackend::new(vec![MockRule::always("Doubt")])));
        let mut req = CompletionRequest::deterministic(gpt4(), "x".into(), 16);
        req.input_text.push('y');
        assert!(matches!(gw.complete(&req), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn every_call_is_logged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runlog.jsonl");
        let gw = Gateway::new(Box::new(MockBackend::new(vec![MockRule::new("hit", "Slogans", FinishReason::Length)])))
            .with_log(RunLog::open(&path).unwrap());
        let hit = CompletionRequest::deterministic(gpt4(), "a hit".into(), 16);
        let miss = CompletionRequest::deterministic(gpt4(), "nothing".into(), 16);
        gw.complete(&hit).unwrap();
        assert!(matches!(gw.complete(&miss), Err(GatewayError::NoMockRule(_))));
        let entries = RunLog::read_entries(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert!(entries.iter().all(|e| e.temperature == 0.0));
        assert_eq!(entries[0].response().unwrap().finish_reason, FinishReason::Length);
        assert!(entries[1].response().is_none() && entries[1].error.is_some());
    }

    #[test]
    fn torn_log_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runlog.jsonl");
        std::fs::write(&path, "{\"timestamp\":\"x\"").unwrap();
        assert!(RunLog::read_entries(&path).unwrap().is_empty());
    }

    #[test]
    fn limiter_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        struct Slow {
            active: Arc<AtomicUsize>,
            peak: Arc<AtomicUsize>,
        }
        impl CompletionBackend for Slow {
            fn kind(&self) -> BackendKind {
                BackendKind::Mock
            }
            fn call(&self, _: &CompletionRequest) -> CallOutcome {
                let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(5));
                self.active.fetch_sub(1, Ordering::SeqCst);
                CallOutcome {
                    result: Ok(CompletionResponse {
                        text: String::new(),
                        finish_reason: FinishReason::Stop,
                        prompt_tokens: 0,
                        completion_tokens: 0,
                    }),
                    attempts: 1,
                }
            }
        }
        let peak = Arc::new(AtomicUsize::new(0));
        let gw = Gateway::new(Box::new(Slow {
            active: Arc::new(AtomicUsize::new(0)),
            peak: peak.clone(),
        }))
        .with_concurrency(2);
        std::thread::scope(|s| {
            for i in 0..8 {
                let gw = &gw;
                s.spawn(move || {
                    let req = CompletionRequest::deterministic(gpt4(), format!("r{i}"), 4);
                    gw.complete(&req).unwrap();
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
