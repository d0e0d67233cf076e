use std::fs;
use std::path::{Path, PathBuf};

use super::{BackendKind, CallOutcome, CompletionBackend, CompletionRequest, CompletionResponse, GatewayError};

/// Directory of `<request_hash>.json` files, each holding one serialized
/// [`CompletionResponse`].
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: &Path) -> Self {
        FixtureStore { dir: dir.to_path_buf() }
    }

    pub fn create(dir: &Path) -> Result<Self, GatewayError> {
        fs::create_dir_all(dir).map_err(|e| GatewayError::io(dir, e))?;
        Ok(Self::new(dir))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.path_for(hash).is_file()
    }

    pub fn load(&self, hash: &str) -> Result<CompletionResponse, GatewayError> {
        let path = self.path_for(hash);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(GatewayError::MissingFixture(hash.to_string()))
            }
            Err(e) => return Err(GatewayError::io(&path, e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| GatewayError::Format {
            path,
            message: e.to_string(),
        })
    }

    /// Persist `response` under the request's hash. An existing fixture with
    /// a different response is only replaced when `overwrite` is set.
    pub fn record_fixture(
        &self,
        request: &CompletionRequest,
        response: &CompletionResponse,
        overwrite: bool,
    ) -> Result<PathBuf, GatewayError> {
        let path = self.path_for(&request.request_hash);
        if !overwrite && path.exists() {
            let existing = self.load(&request.request_hash)?;
            if &existing != response {
                return Err(GatewayError::FixtureExists(request.request_hash.clone()));
            }
            return Ok(path);
        }
        let mut body = serde_json::to_string_pretty(response).map_err(|e| GatewayError::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        body.push('\n');
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body).map_err(|e| GatewayError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| GatewayError::io(&path, e))?;
        Ok(path)
    }
}

/// Serves recorded fixtures by request hash; never touches the network.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    store: FixtureStore,
}

impl ReplayBackend {
    pub fn new(store: FixtureStore) -> Self {
        ReplayBackend { store }
    }
}

impl CompletionBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn call(&self, request: &CompletionRequest) -> CallOutcome {
        CallOutcome {
            result: self.store.load(&request.request_hash),
            attempts: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{EndpointKind, FinishReason, Gateway, ModelSpec};

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest::deterministic(ModelSpec::new("gpt-4", 8192, EndpointKind::Chat).unwrap(), text.into(), 64)
    }

    fn resp(text: &str) -> CompletionResponse {
        CompletionResponse {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            prompt_tokens: 10,
            completion_tokens: 2,
        }
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::create(dir.path()).unwrap();
        let r = req("article");
        store.record_fixture(&r, &resp("Doubt"), false).unwrap();
        let gw = Gateway::new(Box::new(ReplayBackend::new(store.clone())));
        for _ in 0..3 {
            assert_eq!(gw.complete(&r).unwrap(), resp("Doubt"));
        }
        let missing = req("other");
        match gw.complete(&missing) {
            Err(GatewayError::MissingFixture(h)) => assert_eq!(h, missing.request_hash),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rerecord_needs_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::create(dir.path()).unwrap();
        let r = req("article");
        store.record_fixture(&r, &resp("Doubt"), false).unwrap();
        store.record_fixture(&r, &resp("Doubt"), false).unwrap();
        assert!(matches!(
            store.record_fixture(&r, &resp("Slogans"), false),
            Err(GatewayError::FixtureExists(_))
        ));
        store.record_fixture(&r, &resp("Slogans"), true).unwrap();
        assert_eq!(store.load(&r.request_hash).unwrap().text, "Slogans");
    }
}
