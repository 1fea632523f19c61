//! Optional smoke test against a live OpenAI-compatible endpoint. Not part
//! of the release gate. Run with:
//!
//!   ECHO_ENDPOINT=... ECHO_API_KEY=... ECHO_MODEL=... \
//!     cargo test -p echo-core --test live_smoke -- --ignored

use echo_core::gateway::{
    CompletionBackend, CompletionRequest, HttpBackend, LiveConfig, MODEL_ENV,
};

#[test]
#[ignore = "requires a live endpoint via ECHO_ENDPOINT"]
fn live_completion_smoke() {
    let config = LiveConfig::from_env().expect("ECHO_ENDPOINT must be set for the live smoke");
    let backend = HttpBackend::new(config).unwrap();
    let request = CompletionRequest::new("Reply with a single word.", "Say hello.")
        .with_max_tokens(1)
        .with_model_id(std::env::var(MODEL_ENV).unwrap_or_default());
    // A tiny completion must come back as text or a typed provider error,
    // never a panic.
    match backend.complete(&request) {
        Ok(response) => assert!(!response.text.is_empty()),
        Err(e) => eprintln!("live smoke got provider error (acceptable): {e}"),
    }
}
