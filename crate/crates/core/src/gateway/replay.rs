//! Record/replay fixture store: one JSON file per request digest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    request_digest, CompletionBackend, CompletionRequest, CompletionResponse, FixtureKeyConfig,
    GatewayError, TokenUsage,
};

/// Persisted response for one request digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub request_digest: String,
    pub response_text: String,
    pub token_usage: TokenUsage,
}

/// Directory of fixture files named `<digest>.json`.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn read(&self, digest: &str) -> Result<Option<FixtureRecord>, GatewayError> {
        let path = self.path_for(digest);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)
            .map_err(|e| GatewayError::Store(format!("read {}: {e}", path.display())))?;
        let record: FixtureRecord = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Store(format!("decode {}: {e}", path.display())))?;
        Ok(Some(record))
    }

    pub fn write(&self, record: &FixtureRecord) -> Result<(), GatewayError> {
        fs::create_dir_all(&self.dir)
            .map_err(|e| GatewayError::Store(format!("create {}: {e}", self.dir.display())))?;
        let path = self.path_for(&record.request_digest);
        let text = serde_json::to_string_pretty(record)
            .map_err(|e| GatewayError::Store(format!("encode fixture: {e}")))?;
        fs::write(&path, text)
            .map_err(|e| GatewayError::Store(format!("write {}: {e}", path.display())))
    }

    /// Sorted digests present in the store.
    pub fn list(&self) -> Result<Vec<String>, GatewayError> {
        if !self.dir.exists() {
            return Ok(Vec::new());
        }
        let mut digests = Vec::new();
        let entries = fs::read_dir(&self.dir)
            .map_err(|e| GatewayError::Store(format!("list {}: {e}", self.dir.display())))?;
        for entry in entries {
            let entry = entry.map_err(|e| GatewayError::Store(e.to_string()))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".json") {
                digests.push(stem.to_string());
            }
        }
        digests.sort();
        Ok(digests)
    }
}

/// Serves completions from a fixture store; a missing digest is an error
/// naming the digest.
pub struct ReplayBackend {
    store: FixtureStore,
    key: FixtureKeyConfig,
    seen: Mutex<BTreeSet<String>>,
}

impl ReplayBackend {
    pub fn new(store: FixtureStore, key: FixtureKeyConfig) -> Self {
        Self {
            store,
            key,
            seen: Mutex::new(BTreeSet::new()),
        }
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let digest = request_digest(request, &self.key);
        let record = self.store.read(&digest)?.ok_or(GatewayError::FixtureMiss {
            digest: digest.clone(),
        })?;
        self.seen.lock().unwrap().insert(digest);
        Ok(CompletionResponse {
            text: record.response_text,
            token_usage: record.token_usage,
        })
    }

    fn digest_log(&self) -> Vec<String> {
        self.seen.lock().unwrap().iter().cloned().collect()
    }
}

/// Wraps another backend and persists every (digest, response) pair for
/// later replay. A sink write failure is logged; the request is still served.
pub struct RecordBackend<'a> {
    inner: &'a dyn CompletionBackend,
    store: FixtureStore,
    key: FixtureKeyConfig,
    seen: Mutex<BTreeSet<String>>,
}

impl<'a> RecordBackend<'a> {
    pub fn new(
        inner: &'a dyn CompletionBackend,
        store: FixtureStore,
        key: FixtureKeyConfig,
    ) -> Self {
        Self {
            inner,
            store,
            key,
            seen: Mutex::new(BTreeSet::new()),
        }
    }
}

impl CompletionBackend for RecordBackend<'_> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let response = self.inner.complete(request)?;
        let digest = request_digest(request, &self.key);
        let record = FixtureRecord {
            request_digest: digest.clone(),
            response_text: response.text.clone(),
            token_usage: response.token_usage,
        };
        if let Err(e) = self.store.write(&record) {
            log::warn!("fixture write failed for {digest}: {e}");
        }
        self.seen.lock().unwrap().insert(digest);
        Ok(response)
    }

    fn digest_log(&self) -> Vec<String> {
        self.seen.lock().unwrap().iter().cloned().collect()
    }
}
