//! Scripted backend: a deterministic function of the request, for tests and
//! offline runs.

use std::sync::LazyLock;

use regex::Regex;

use super::{CompletionBackend, CompletionRequest, CompletionResponse, GatewayError};

type Script =
    Box<dyn Fn(&CompletionRequest) -> Result<CompletionResponse, GatewayError> + Send + Sync>;

pub struct ScriptedBackend {
    script: Script,
}

impl ScriptedBackend {
    pub fn new<F>(script: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<CompletionResponse, GatewayError>
            + Send
            + Sync
            + 'static,
    {
        Self {
            script: Box::new(script),
        }
    }

    /// Always returns the given text with zero token usage.
    pub fn fixed_text(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(CompletionResponse::text_only(text.clone())))
    }

    /// Always fails with a scripted error.
    pub fn failing(message: impl Into<String>) -> Self {
        let message = message.into();
        Self::new(move |_| Err(GatewayError::Scripted(message.clone())))
    }

    /// A deterministic stand-in provider that produces a structurally valid
    /// reply for every prompt shape this crate emits. Useful for offline
    /// smoke runs; not a model.
    pub fn canned() -> Self {
        Self::new(|request| Ok(CompletionResponse::text_only(canned_reply(request))))
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        (self.script)(request)
    }
}

static FIRST_STEP_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^Step 0 - (.+?) \(").unwrap());

fn first_agent_name(prompt: &str) -> Option<&str> {
    FIRST_STEP_HEADER
        .captures(prompt)
        .and_then(|c| c.get(1))
        .map(|m| m.as_str())
}

fn canned_reply(request: &CompletionRequest) -> String {
    let system = request.system_prompt.as_str();
    let user = request.user_prompt.as_str();

    if user.contains("Answer yes or no") {
        return "yes".to_string();
    }
    if user.contains("first half") {
        return "first".to_string();
    }
    if system.contains("Objective Analysis Agent") {
        let attribution = match first_agent_name(user) {
            Some(name) => format!("[{}]", serde_json::to_string(name).unwrap()),
            None => "null".to_string(),
        };
        return format!(
            "<json>{{\"analysis_summary\": \"canned analysis\", \"agent_evaluations\": [], \
             \"primary_conclusion\": {{\"type\": \"single_agent\", \"attribution\": {attribution}, \
             \"mistake_step\": 0, \"confidence\": 0.9, \"reasoning\": \"canned attribution\"}}, \
             \"alternative_hypotheses\": []}}</json>"
        );
    }
    if system.contains("Context-Aware Step Agent") {
        return "## Purpose:\ncanned\n\n## Assumptions and Information:\ncanned\n\n\
                ## Errors:\ncanned\n\n## Evidence:\ncanned"
            .to_string();
    }
    if system.contains("mistake_agent") {
        let agent = first_agent_name(user).unwrap_or("Unknown");
        return format!(
            "<json>{{\"mistake_agent\": {}, \"mistake_step\": \"0\", \
             \"mistake_reason\": \"canned verdict\"}}</json>",
            serde_json::to_string(agent).unwrap()
        );
    }
    "OK".to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_text_returns_scripted_value() {
        let backend = ScriptedBackend::fixed_text("X");
        let response = backend.complete(&CompletionRequest::new("s", "u")).unwrap();
        assert_eq!(response.text, "X");
        assert_eq!(response.token_usage.total(), 0);
    }

    #[test]
    fn failing_backend_errors() {
        let backend = ScriptedBackend::failing("boom");
        let err = backend
            .complete(&CompletionRequest::new("s", "u"))
            .unwrap_err();
        assert!(matches!(err, GatewayError::Scripted(_)));
    }

    #[test]
    fn canned_is_deterministic() {
        let backend = ScriptedBackend::canned();
        let request = CompletionRequest::new(
            "You are an Objective Analysis Agent ...",
            "Step 0 - Alice (planner):\nhello",
        );
        let a = backend.complete(&request).unwrap();
        let b = backend.complete(&request).unwrap();
        assert_eq!(a, b);
        assert!(a.text.contains("Alice"));
    }
}
