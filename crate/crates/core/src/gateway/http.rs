//! Live backend for OpenAI-compatible chat-completion endpoints, with
//! bounded retries on transient failures.

use std::time::Duration;

use serde_json::{json, Value};

use super::{CompletionBackend, CompletionRequest, CompletionResponse, GatewayError, TokenUsage};

/// Environment variable naming the chat-completions URL.
pub const ENDPOINT_ENV: &str = "ECHO_ENDPOINT";
/// Environment variable carrying the bearer credential (optional).
pub const API_KEY_ENV: &str = "ECHO_API_KEY";
/// Environment variable naming the default model id.
pub const MODEL_ENV: &str = "ECHO_MODEL";
/// Environment variable selecting the wire style.
pub const WIRE_ENV: &str = "ECHO_WIRE";

/// Request/response payload shape spoken by the endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WireStyle {
    /// `messages` array with a system role; `choices[0].message.content`.
    #[default]
    OpenAiChat,
    /// Top-level `system` string plus a user message; `content[0].text`.
    AnthropicMessages,
}

impl WireStyle {
    pub fn id(&self) -> &'static str {
        match self {
            WireStyle::OpenAiChat => "openai_chat",
            WireStyle::AnthropicMessages => "anthropic_messages",
        }
    }

    pub fn parse(s: &str) -> Option<WireStyle> {
        match s {
            "openai_chat" => Some(WireStyle::OpenAiChat),
            "anthropic_messages" => Some(WireStyle::AnthropicMessages),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub wire: WireStyle,
    pub extra_headers: Vec<(String, String)>,
    pub timeout: Duration,
    /// Total attempts per request (first try included).
    pub max_attempts: u32,
    pub backoff_base: Duration,
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            wire: WireStyle::default(),
            extra_headers: Vec::new(),
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            backoff_base: Duration::from_millis(250),
        }
    }

    /// Endpoint, credentials, and wire style from `ECHO_ENDPOINT` /
    /// `ECHO_API_KEY` / `ECHO_WIRE`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let endpoint = std::env::var(ENDPOINT_ENV).map_err(|_| {
            GatewayError::Config(format!(
                "{ENDPOINT_ENV} is not set; required for live provider"
            ))
        })?;
        let mut config = Self::new(endpoint);
        config.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        if let Ok(raw) = std::env::var(WIRE_ENV) {
            config.wire = WireStyle::parse(&raw)
                .ok_or_else(|| GatewayError::Config(format!("unknown wire style `{raw}`")))?;
        }
        Ok(config)
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: LiveConfig,
}

impl HttpBackend {
    pub fn new(config: LiveConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Config(format!("failed to build HTTP client: {e}")))?;
        Ok(Self { client, config })
    }

    fn body_for(&self, request: &CompletionRequest) -> Value {
        match self.config.wire {
            WireStyle::OpenAiChat => json!({
                "model": request.model_id,
                "messages": [
                    {"role": "system", "content": request.system_prompt},
                    {"role": "user", "content": request.user_prompt},
                ],
                "temperature": request.temperature,
                "top_p": request.top_p,
                "max_tokens": request.max_tokens,
            }),
            WireStyle::AnthropicMessages => json!({
                "model": request.model_id,
                "system": request.system_prompt,
                "messages": [
                    {"role": "user", "content": request.user_prompt},
                ],
                "temperature": request.temperature,
                "top_p": request.top_p,
                "max_tokens": request.max_tokens,
            }),
        }
    }

    fn decode(&self, value: &Value) -> Result<CompletionResponse, GatewayError> {
        let text = match self.config.wire {
            WireStyle::OpenAiChat => value["choices"][0]["message"]["content"]
                .as_str()
                .or_else(|| value["choices"][0]["text"].as_str()),
            WireStyle::AnthropicMessages => value["content"][0]["text"].as_str(),
        }
        .ok_or_else(|| GatewayError::Protocol("response carries no message content".to_string()))?
        .to_string();
        let usage = match self.config.wire {
            WireStyle::OpenAiChat => TokenUsage {
                input_tokens: value["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
                output_tokens: value["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            },
            WireStyle::AnthropicMessages => TokenUsage {
                input_tokens: value["usage"]["input_tokens"].as_u64().unwrap_or(0),
                output_tokens: value["usage"]["output_tokens"].as_u64().unwrap_or(0),
            },
        };
        Ok(CompletionResponse {
            text,
            token_usage: usage,
        })
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let mut builder = self
            .client
            .post(&self.config.endpoint)
            .json(&self.body_for(request));
        if let Some(key) = &self.config.api_key {
            builder = match self.config.wire {
                WireStyle::OpenAiChat => builder.bearer_auth(key),
                WireStyle::AnthropicMessages => builder
                    .header("x-api-key", key)
                    .header("anthropic-version", "2023-06-01"),
            };
        }
        for (name, value) in &self.config.extra_headers {
            builder = builder.header(name, value);
        }

        let response = builder
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Http {
                status,
                body: body.chars().take(500).collect(),
            });
        }

        let value: Value = serde_json::from_str(&body)
            .map_err(|e| GatewayError::Protocol(format!("response is not JSON: {e}")))?;
        self.decode(&value)
    }
}

fn retryable(error: &GatewayError) -> bool {
    match error {
        GatewayError::Transport(_) => true,
        GatewayError::Http { status, .. } => *status == 429 || (500..600).contains(status),
        _ => false,
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let attempts = self.config.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            match self.attempt(request) {
                Ok(response) => return Ok(response),
                Err(e) if retryable(&e) => {
                    log::warn!("attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(GatewayError::RetriesExhausted {
            attempts,
            last: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_styles_shape_request_bodies() {
        let request = CompletionRequest::new("sys", "user").with_model_id("m");
        let mut config = LiveConfig::new("http://localhost/v1/chat/completions");

        config.wire = WireStyle::OpenAiChat;
        let backend = HttpBackend::new(config.clone()).unwrap();
        let body = backend.body_for(&request);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "user");

        config.wire = WireStyle::AnthropicMessages;
        let backend = HttpBackend::new(config).unwrap();
        let body = backend.body_for(&request);
        assert_eq!(body["system"], "sys");
        assert_eq!(body["messages"][0]["role"], "user");
    }

    #[test]
    fn wire_styles_decode_their_responses() {
        let mut config = LiveConfig::new("http://localhost");
        config.wire = WireStyle::OpenAiChat;
        let backend = HttpBackend::new(config.clone()).unwrap();
        let value = json!({
            "choices": [{"message": {"content": "hi"}}],
            "usage": {"prompt_tokens": 3, "completion_tokens": 2},
        });
        let decoded = backend.decode(&value).unwrap();
        assert_eq!(decoded.text, "hi");
        assert_eq!(decoded.token_usage, TokenUsage::new(3, 2));

        config.wire = WireStyle::AnthropicMessages;
        let backend = HttpBackend::new(config).unwrap();
        let value = json!({
            "content": [{"type": "text", "text": "hey"}],
            "usage": {"input_tokens": 5, "output_tokens": 1},
        });
        let decoded = backend.decode(&value).unwrap();
        assert_eq!(decoded.text, "hey");
        assert_eq!(decoded.token_usage, TokenUsage::new(5, 1));
    }
}
