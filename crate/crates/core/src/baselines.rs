//! Comparison strategies: whole-log attribution, sequential scan, bisection,
//! and the two judge pipelines built from per-step advocate arguments.

use serde_json::{json, Value};

use crate::context::{
    build_hierarchical_contexts_with, extract_fixed_window_contexts, format_hierarchical_context,
    ContextType, FixedWindowContext, HierarchicalContext, PatternTable,
};
use crate::gateway::{CompletionBackend, CompletionRequest, TokenUsage};
use crate::prompts::{ground_truth_section, PromptLibrary};
use crate::trace::InteractionTrace;

/// Sentinel agent name for unparseable or failed attributions.
pub const UNKNOWN_AGENT: &str = "Unknown";

/// A strategy's final answer for one case.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Attribution {
    pub mistake_agent: String,
    /// 0-based step; absent when the strategy could not resolve one.
    pub mistake_step: Option<usize>,
    pub mistake_reason: String,
    pub token_usage: TokenUsage,
}

impl Attribution {
    pub fn unknown(reason: impl Into<String>, token_usage: TokenUsage) -> Self {
        Self {
            mistake_agent: UNKNOWN_AGENT.to_string(),
            mistake_step: None,
            mistake_reason: reason.into(),
            token_usage,
        }
    }

    pub fn is_unknown(&self) -> bool {
        self.mistake_agent == UNKNOWN_AGENT
    }
}

/// One advocate's sectioned argument for its own step.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepArgument {
    /// `step_<ordinal>`; parses back to the step index.
    pub step_id: String,
    pub agent_name: String,
    /// Sectioned text (Purpose / Assumptions and Information / Errors / Evidence).
    pub analysis: String,
    pub token_usage: TokenUsage,
}

pub fn step_id_for(index: usize) -> String {
    format!("step_{index}")
}

pub fn parse_step_id(step_id: &str) -> Option<usize> {
    step_id.strip_prefix("step_")?.parse().ok()
}

/// Backend plus the prompt/model surface shared by every strategy call.
#[derive(Clone, Copy)]
pub struct ProviderCtx<'a> {
    pub backend: &'a dyn CompletionBackend,
    pub prompts: &'a PromptLibrary,
    pub model_id: &'a str,
}

fn render_steps(trace: &InteractionTrace, range: std::ops::Range<usize>) -> String {
    let mut lines = Vec::new();
    for step in &trace.steps[range] {
        lines.push(format!(
            "Step {} - {} ({}):",
            step.index, step.name, step.role
        ));
        lines.push(step.content.clone());
        lines.push(String::new());
    }
    lines.join("\n")
}

fn tagged_or_balanced(text: &str) -> Option<&str> {
    let tagged = || {
        let start = text.find("<json>")? + "<json>".len();
        let end = text[start..].find("</json>")? + start;
        Some(&text[start..end])
    };
    tagged().or_else(|| {
        let start = text.find('{')?;
        let bytes = text.as_bytes();
        let (mut depth, mut in_string, mut escaped) = (0usize, false, false);
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..=i]);
                    }
                }
                _ => {}
            }
        }
        None
    })
}

/// Parse a `{mistake_agent, mistake_step, mistake_reason}` verdict; accepts
/// the step as an integer or a numeric string.
fn parse_attribution_reply(text: &str, usage: TokenUsage) -> Attribution {
    let parsed = tagged_or_balanced(text).and_then(|s| serde_json::from_str::<Value>(s).ok());
    let Some(Value::Object(obj)) = parsed else {
        return Attribution::unknown("Error parsing response", usage);
    };
    let agent = obj
        .get("mistake_agent")
        .and_then(Value::as_str)
        .unwrap_or(UNKNOWN_AGENT)
        .to_string();
    let step = match obj.get("mistake_step") {
        Some(Value::Number(n)) => n.as_i64().filter(|s| *s >= 0).map(|s| s as usize),
        Some(Value::String(s)) => s.trim().parse::<usize>().ok(),
        _ => None,
    };
    let reason = obj
        .get("mistake_reason")
        .and_then(Value::as_str)
        .unwrap_or("Error parsing response")
        .to_string();
    Attribution {
        mistake_agent: agent,
        mistake_step: step,
        mistake_reason: reason,
        token_usage: usage,
    }
}

/// One completion over the full rendered trace; unparseable replies and
/// provider failures degrade to the Unknown sentinel.
pub fn all_at_once(
    ctx: &ProviderCtx,
    trace: &InteractionTrace,
    with_ground_truth: bool,
) -> Attribution {
    let gt = ground_truth_section(trace.ground_truth.as_deref(), with_ground_truth);
    let conversation = render_steps(trace, 0..trace.len());
    let request = CompletionRequest::new(
        ctx.prompts.get("all_at_once_system"),
        ctx.prompts.render(
            "all_at_once_user",
            &[
                ("query", trace.query.as_str()),
                ("ground_truth_section", gt.as_str()),
                ("final_answer", trace.final_answer.as_str()),
                ("conversation", conversation.as_str()),
            ],
        ),
    )
    .with_model_id(ctx.model_id);

    match ctx.backend.complete(&request) {
        Ok(response) => parse_attribution_reply(&response.text, response.token_usage),
        Err(e) => Attribution::unknown(format!("provider error: {e}"), TokenUsage::default()),
    }
}

fn reply_says_yes(text: &str) -> bool {
    text.split_whitespace()
        .next()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_ascii_alphabetic())
                .eq_ignore_ascii_case("yes")
        })
        .unwrap_or(false)
}

/// Scan steps in order asking whether each is the first error; the first
/// "yes" wins. Call failures count as "no", so the scan always terminates;
/// a trace with no "yes" attributes its last step.
pub fn step_by_step(
    ctx: &ProviderCtx,
    trace: &InteractionTrace,
    with_ground_truth: bool,
) -> Attribution {
    let gt = ground_truth_section(trace.ground_truth.as_deref(), with_ground_truth);
    let mut usage = TokenUsage::default();
    let n = trace.len();
    for i in 0..n {
        let conversation = render_steps(trace, 0..i + 1);
        let request = CompletionRequest::new(
            ctx.prompts.get("step_by_step_system"),
            ctx.prompts.render(
                "step_by_step_user",
                &[
                    ("query", trace.query.as_str()),
                    ("ground_truth_section", gt.as_str()),
                    ("final_answer", trace.final_answer.as_str()),
                    ("conversation", conversation.as_str()),
                    ("step_index", i.to_string().as_str()),
                    ("agent_name", trace.steps[i].name.as_str()),
                ],
            ),
        )
        .with_model_id(ctx.model_id);

        match ctx.backend.complete(&request) {
            Ok(response) => {
                usage.add(response.token_usage);
                if reply_says_yes(&response.text) {
                    return Attribution {
                        mistake_agent: trace.steps[i].name.clone(),
                        mistake_step: Some(i),
                        mistake_reason: response.text.trim().to_string(),
                        token_usage: usage,
                    };
                }
            }
            Err(e) => log::warn!("step {i} check failed, treating as no: {e}"),
        }
    }
    Attribution {
        mistake_agent: trace.steps[n - 1].name.clone(),
        mistake_step: Some(n - 1),
        mistake_reason: "no error detected before trace end".to_string(),
        token_usage: usage,
    }
}

fn reply_picks_second(text: &str) -> bool {
    let lower = text.to_ascii_lowercase();
    match (lower.find("first"), lower.find("second")) {
        (Some(f), Some(s)) => s < f,
        (None, Some(_)) => true,
        // Unparseable replies degrade deterministically to the first half.
        _ => false,
    }
}

/// Halve a [lo, hi) window until one step remains (~⌈log2 n⌉ calls).
pub fn binary_search(
    ctx: &ProviderCtx,
    trace: &InteractionTrace,
    with_ground_truth: bool,
) -> Attribution {
    let gt = ground_truth_section(trace.ground_truth.as_deref(), with_ground_truth);
    let mut usage = TokenUsage::default();
    let (mut lo, mut hi) = (0usize, trace.len());
    let mut last_reply = String::new();
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let conversation = render_steps(trace, lo..hi);
        let request = CompletionRequest::new(
            ctx.prompts.get("binary_search_system"),
            ctx.prompts.render(
                "binary_search_user",
                &[
                    ("query", trace.query.as_str()),
                    ("ground_truth_section", gt.as_str()),
                    ("final_answer", trace.final_answer.as_str()),
                    ("conversation", conversation.as_str()),
                    ("lo", lo.to_string().as_str()),
                    ("hi_inclusive", (hi - 1).to_string().as_str()),
                    ("mid", mid.to_string().as_str()),
                    ("mid_minus_one", (mid - 1).to_string().as_str()),
                ],
            ),
        )
        .with_model_id(ctx.model_id);

        let second = match ctx.backend.complete(&request) {
            Ok(response) => {
                usage.add(response.token_usage);
                last_reply = response.text.trim().to_string();
                reply_picks_second(&response.text)
            }
            Err(e) => {
                log::warn!("bisection call failed, taking first half: {e}");
                false
            }
        };
        if second {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Attribution {
        mistake_agent: trace.steps[lo].name.clone(),
        mistake_step: Some(lo),
        mistake_reason: if last_reply.is_empty() {
            "single-step trace".to_string()
        } else {
            format!("located by bisection; final reply: {last_reply}")
        },
        token_usage: usage,
    }
}

fn argue_with_context(
    ctx: &ProviderCtx,
    user_template: &str,
    agent_context: &str,
    step_index: usize,
    agent_name: &str,
    trace: &InteractionTrace,
    with_ground_truth: bool,
) -> StepArgument {
    let gt = ground_truth_section(trace.ground_truth.as_deref(), with_ground_truth);
    let request = CompletionRequest::new(
        ctx.prompts.get("argue_system"),
        ctx.prompts.render(
            user_template,
            &[
                ("query", trace.query.as_str()),
                ("ground_truth_section", gt.as_str()),
                ("final_answer", trace.final_answer.as_str()),
                ("agent_context", agent_context),
            ],
        ),
    )
    .with_model_id(ctx.model_id);

    match ctx.backend.complete(&request) {
        Ok(response) => StepArgument {
            step_id: step_id_for(step_index),
            agent_name: agent_name.to_string(),
            analysis: response.text,
            token_usage: response.token_usage,
        },
        Err(e) => {
            log::warn!("advocate call for step {step_index} failed: {e}");
            StepArgument {
                step_id: step_id_for(step_index),
                agent_name: agent_name.to_string(),
                analysis: "unavailable".to_string(),
                token_usage: TokenUsage::default(),
            }
        }
    }
}

fn render_window(window: &FixedWindowContext) -> String {
    let mut lines = Vec::new();
    match &window.prev {
        Some(prev) => lines.push(format!(
            "Previous agent (Step {}): {} ({})\n{}",
            prev.index, prev.name, prev.role, prev.content
        )),
        None => lines.push("Previous agent: none (first step)".to_string()),
    }
    lines.push(format!(
        "Current agent (Step {}), YOUR agent: {} ({})\n{}",
        window.current.index, window.current.name, window.current.role, window.current.content
    ));
    match &window.next {
        Some(next) => lines.push(format!(
            "Next agent (Step {}): {} ({})\n{}",
            next.index, next.name, next.role, next.content
        )),
        None => lines.push("Next agent: none (last step)".to_string()),
    }
    lines.join("\n\n")
}

/// Advocate argument for one step seen through its ±1 window.
pub fn argue_step_fixed(
    ctx: &ProviderCtx,
    window: &FixedWindowContext,
    trace: &InteractionTrace,
    with_ground_truth: bool,
) -> StepArgument {
    argue_with_context(
        ctx,
        "argue_user_fixed",
        &render_window(window),
        window.current.index,
        &window.current.name,
        trace,
        with_ground_truth,
    )
}

/// Advocate argument for one step seen through its hierarchical context.
pub fn argue_step_hierarchical(
    ctx: &ProviderCtx,
    context: &HierarchicalContext,
    trace: &InteractionTrace,
    with_ground_truth: bool,
) -> StepArgument {
    argue_with_context(
        ctx,
        "argue_user_hierarchical",
        &format_hierarchical_context(context),
        context.target.index,
        &context.target.name,
        trace,
        with_ground_truth,
    )
}

/// Weigh the advocates' competing arguments at temperature 0 and return the
/// final verdict; failures degrade to the Unknown sentinel.
pub fn judge(
    ctx: &ProviderCtx,
    arguments: &[StepArgument],
    trace: &InteractionTrace,
    with_ground_truth: bool,
) -> Attribution {
    let gt = ground_truth_section(trace.ground_truth.as_deref(), with_ground_truth);
    let rendered: Vec<Value> = arguments
        .iter()
        .map(|a| {
            json!({
                "step_id": a.step_id,
                "agent_name": a.agent_name,
                "analysis": a.analysis,
            })
        })
        .collect();
    let arguments_json = serde_json::to_string_pretty(&rendered).expect("step arguments serialize");
    let request = CompletionRequest::new(
        ctx.prompts.get("judge_system"),
        ctx.prompts.render(
            "judge_user",
            &[
                ("query", trace.query.as_str()),
                ("ground_truth_section", gt.as_str()),
                ("final_answer", trace.final_answer.as_str()),
                ("arguments", arguments_json.as_str()),
            ],
        ),
    )
    .with_temperature(0.0)
    .with_model_id(ctx.model_id);

    match ctx.backend.complete(&request) {
        Ok(response) => parse_attribution_reply(&response.text, response.token_usage),
        Err(e) => Attribution::unknown(format!("provider error: {e}"), TokenUsage::default()),
    }
}

fn sum_usage(attribution: &mut Attribution, arguments: &[StepArgument]) {
    for argument in arguments {
        attribution.token_usage.add(argument.token_usage);
    }
}

/// Fixed-window pipeline: one advocate per step over ±1 windows, then the
/// judge.
pub fn fixed_window_judge(
    ctx: &ProviderCtx,
    trace: &InteractionTrace,
    with_ground_truth: bool,
) -> Attribution {
    let arguments: Vec<StepArgument> = extract_fixed_window_contexts(trace)
        .iter()
        .map(|w| argue_step_fixed(ctx, w, trace, with_ground_truth))
        .collect();
    let mut verdict = judge(ctx, &arguments, trace, with_ground_truth);
    sum_usage(&mut verdict, &arguments);
    verdict
}

/// Hierarchical-context pipeline: same shape as the fixed-window pipeline
/// with graduated contexts swapped in.
pub fn hierarchical_judge(
    ctx: &ProviderCtx,
    trace: &InteractionTrace,
    with_ground_truth: bool,
    context_type: ContextType,
    table: &PatternTable,
) -> Attribution {
    let contexts = build_hierarchical_contexts_with(trace, context_type, table);
    let arguments: Vec<StepArgument> = contexts
        .iter()
        .map(|c| argue_step_hierarchical(ctx, c, trace, with_ground_truth))
        .collect();
    let mut verdict = judge(ctx, &arguments, trace, with_ground_truth);
    sum_usage(&mut verdict, &arguments);
    verdict
}
