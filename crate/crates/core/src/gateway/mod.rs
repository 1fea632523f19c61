//! Single completion-provider boundary with interchangeable backends (live
//! HTTP, record/replay fixtures, scripted mock) and uniform token accounting.

mod http;
mod mock;
mod replay;

pub use http::{
    HttpBackend, LiveConfig, WireStyle, API_KEY_ENV, ENDPOINT_ENV, MODEL_ENV, WIRE_ENV,
};
pub use mock::ScriptedBackend;
pub use replay::{FixtureRecord, FixtureStore, RecordBackend, ReplayBackend};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Input/output token counts for one or more completions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }

    pub fn add(&mut self, other: TokenUsage) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }
}

/// One chat completion: a system prompt plus a user prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    /// Sampling temperature in [0, 1].
    pub temperature: f64,
    /// Nucleus sampling mass in (0, 1].
    pub top_p: f64,
    pub max_tokens: u32,
    /// Opaque provider-side model identifier.
    pub model_id: String,
}

impl CompletionRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.7,
            top_p: 0.9,
            max_tokens: 4096,
            model_id: String::new(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature.clamp(0.0, 1.0);
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens.max(1);
        self
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub token_usage: TokenUsage,
}

impl CompletionResponse {
    pub fn text_only(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            token_usage: TokenUsage::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("fixture miss for digest {digest}")]
    FixtureMiss { digest: String },
    #[error("fixture store error: {0}")]
    Store(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("gateway configuration error: {0}")]
    Config(String),
}

impl GatewayError {
    /// True when the caller ran out of provider attempts (as opposed to a
    /// local configuration or fixture problem).
    pub fn is_provider_exhaustion(&self) -> bool {
        matches!(
            self,
            GatewayError::RetriesExhausted { .. }
                | GatewayError::Transport(_)
                | GatewayError::Http { .. }
                | GatewayError::Protocol(_)
        )
    }
}

/// A completion provider. Implementations must be safely callable from
/// multiple concurrent analysts.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;

    /// Fixture digests touched so far, for run provenance. Empty for
    /// backends without a fixture store.
    fn digest_log(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Controls which request fields participate in the fixture key.
///
/// `model_id` is excluded by default so fixtures survive model renames;
/// temperature is included by default because panel analysts may differ only
/// by temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureKeyConfig {
    pub include_model_id: bool,
    pub include_temperature: bool,
}

impl Default for FixtureKeyConfig {
    fn default() -> Self {
        Self {
            include_model_id: false,
            include_temperature: true,
        }
    }
}

fn canonical_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical hash of a request under the given key config. Prompt whitespace
/// is collapsed so formatting-only changes keep their fixtures.
pub fn request_digest(request: &CompletionRequest, key: &FixtureKeyConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"system\x1f");
    hasher.update(canonical_ws(&request.system_prompt).as_bytes());
    hasher.update(b"\x1euser\x1f");
    hasher.update(canonical_ws(&request.user_prompt).as_bytes());
    hasher.update(b"\x1etop_p\x1f");
    hasher.update(format!("{}", request.top_p).as_bytes());
    hasher.update(b"\x1emax_tokens\x1f");
    hasher.update(format!("{}", request.max_tokens).as_bytes());
    if key.include_temperature {
        hasher.update(b"\x1etemperature\x1f");
        hasher.update(format!("{}", request.temperature).as_bytes());
    }
    if key.include_model_id {
        hasher.update(b"\x1emodel\x1f");
        hasher.update(request.model_id.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Wrapper that counts calls and accumulates token usage across a run.
pub struct MeteredBackend<'a> {
    inner: &'a dyn CompletionBackend,
    calls: AtomicU64,
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
}

impl<'a> MeteredBackend<'a> {
    pub fn new(inner: &'a dyn CompletionBackend) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
            input_tokens: AtomicU64::new(0),
            output_tokens: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn usage(&self) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens.load(Ordering::Relaxed),
            output_tokens: self.output_tokens.load(Ordering::Relaxed),
        }
    }
}

impl CompletionBackend for MeteredBackend<'_> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let response = self.inner.complete(request)?;
        self.input_tokens
            .fetch_add(response.token_usage.input_tokens, Ordering::Relaxed);
        self.output_tokens
            .fetch_add(response.token_usage.output_tokens, Ordering::Relaxed);
        Ok(response)
    }

    fn digest_log(&self) -> Vec<String> {
        self.inner.digest_log()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_whitespace_and_model_by_default() {
        let key = FixtureKeyConfig::default();
        let a = CompletionRequest::new("sys  prompt", "user\n\nprompt").with_model_id("m1");
        let b = CompletionRequest::new("sys prompt", "user prompt").with_model_id("m2");
        assert_eq!(request_digest(&a, &key), request_digest(&b, &key));
    }

    #[test]
    fn digest_separates_temperatures_by_default() {
        let key = FixtureKeyConfig::default();
        let a = CompletionRequest::new("s", "u").with_temperature(0.3);
        let b = CompletionRequest::new("s", "u").with_temperature(0.9);
        assert_ne!(request_digest(&a, &key), request_digest(&b, &key));

        let loose = FixtureKeyConfig {
            include_temperature: false,
            ..Default::default()
        };
        assert_eq!(request_digest(&a, &loose), request_digest(&b, &loose));
    }

    #[test]
    fn digest_separates_prompt_content() {
        let key = FixtureKeyConfig::default();
        let a = CompletionRequest::new("s", "one");
        let b = CompletionRequest::new("s", "two");
        assert_ne!(request_digest(&a, &key), request_digest(&b, &key));
    }

    #[test]
    fn metered_backend_accumulates() {
        let backend = ScriptedBackend::new(|_| {
            Ok(CompletionResponse {
                text: "x".to_string(),
                token_usage: TokenUsage::new(10, 5),
            })
        });
        let meter = MeteredBackend::new(&backend);
        let request = CompletionRequest::new("s", "u");
        meter.complete(&request).unwrap();
        meter.complete(&request).unwrap();
        assert_eq!(meter.calls(), 2);
        assert_eq!(meter.usage(), TokenUsage::new(20, 10));
    }
}
