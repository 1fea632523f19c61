//! Role-specialized analyst panel: profile pool, seeded sampling, prompt
//! assembly, structured-verdict parsing, and bounded-concurrency execution.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context::{format_hierarchical_context, HierarchicalContext};
use crate::gateway::{CompletionBackend, CompletionRequest, TokenUsage};
use crate::prompts::{ground_truth_section, PromptLibrary};
use crate::trace::InteractionTrace;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("panel size {requested} is outside 1..={available}")]
    InvalidPanelSize { requested: usize, available: usize },
}

/// The six analyst specializations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalystRole {
    Conservative,
    Liberal,
    DetailFocused,
    PatternFocused,
    Skeptical,
    General,
}

impl AnalystRole {
    pub const ALL: [AnalystRole; 6] = [
        AnalystRole::Conservative,
        AnalystRole::Liberal,
        AnalystRole::DetailFocused,
        AnalystRole::PatternFocused,
        AnalystRole::Skeptical,
        AnalystRole::General,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            AnalystRole::Conservative => "conservative",
            AnalystRole::Liberal => "liberal",
            AnalystRole::DetailFocused => "detail_focused",
            AnalystRole::PatternFocused => "pattern_focused",
            AnalystRole::Skeptical => "skeptical",
            AnalystRole::General => "general",
        }
    }

    pub fn focus_instructions(&self) -> &'static str {
        match self {
            AnalystRole::Conservative => {
                "You are a conservative analyst with high confidence thresholds. Only attribute \
                 errors when you have strong, clear evidence. Prefer single-agent attributions \
                 over multi-agent ones. Be cautious about making attributions without definitive \
                 proof."
            }
            AnalystRole::Liberal => {
                "You are a liberal analyst more willing to make attributions based on reasonable \
                 evidence. Consider multi-agent scenarios and subtle errors that might be \
                 overlooked. Be open to making attributions even with moderate confidence."
            }
            AnalystRole::DetailFocused => {
                "You are detail-oriented and focus on specific evidence, exact wording, and \
                 fine-grained analysis. Look for subtle inconsistencies, minor logical gaps, and \
                 precise factual inaccuracies. Prioritize concrete evidence over general patterns."
            }
            AnalystRole::PatternFocused => {
                "You are focused on recognizing broader patterns and systemic issues in reasoning \
                 chains. Look for recurring themes, logical flow problems, and how errors \
                 propagate through the conversation. Consider the overall reasoning structure."
            }
            AnalystRole::Skeptical => {
                "You are highly skeptical and question all assumptions. Look for alternative \
                 explanations, consider whether apparent errors might be valid reasoning, and \
                 examine if the ground truth itself could be questioned. Challenge conventional \
                 attributions."
            }
            AnalystRole::General => {
                "You are a balanced general analyst with no specific specialization. Approach \
                 the analysis with broad perspective, considering all types of evidence equally. \
                 Look for the most obvious and impactful mistakes based on objective evaluation."
            }
        }
    }
}

impl fmt::Display for AnalystRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Focus text for a role id; unknown ids fall back to the general profile.
pub fn focus_instructions_for(role_id: &str) -> &'static str {
    AnalystRole::ALL
        .iter()
        .find(|r| r.id() == role_id)
        .unwrap_or(&AnalystRole::General)
        .focus_instructions()
}

/// One panel slot: a role plus its sampling temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalystProfile {
    pub role: AnalystRole,
    pub focus_instructions: String,
    pub temperature: f64,
}

/// The full pool of six analyst profiles at the default temperature.
pub fn builtin_profiles() -> Vec<AnalystProfile> {
    AnalystRole::ALL
        .iter()
        .map(|role| AnalystProfile {
            role: *role,
            focus_instructions: role.focus_instructions().to_string(),
            temperature: 0.7,
        })
        .collect()
}

/// Temperatures evenly spaced across [0.3, 0.9], computed on a hundredths
/// grid so the endpoints are exact.
fn spaced_temperatures(k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![0.6];
    }
    (0..k)
        .map(|i| (30 + i * 60 / (k - 1)) as f64 / 100.0)
        .collect()
}

/// Draw `k` distinct profiles without replacement using a seeded generator
/// and assign evenly spaced temperatures in panel order.
pub fn sample_panel(
    pool: &[AnalystProfile],
    k: usize,
    seed: u64,
) -> Result<Vec<AnalystProfile>, PanelError> {
    if k == 0 || k > pool.len() {
        return Err(PanelError::InvalidPanelSize {
            requested: k,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    for i in 0..k {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    let temperatures = spaced_temperatures(k);
    Ok(indices[..k]
        .iter()
        .zip(temperatures)
        .map(|(&p, temperature)| AnalystProfile {
            temperature,
            ..pool[p].clone()
        })
        .collect())
}

/// Stable per-case seed derived from the run seed and the case id.
pub fn case_seed(seed: u64, case_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(case_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Per-agent assessment inside one analyst verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEvaluation {
    pub agent_name: String,
    pub step_index: i64,
    /// In [0, 1]; out-of-range model output is clamped at parse time.
    pub error_likelihood: f64,
    pub reasoning: String,
    pub evidence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConclusionKind {
    SingleAgent,
    MultiAgent,
}

impl ConclusionKind {
    pub fn id(&self) -> &'static str {
        match self {
            ConclusionKind::SingleAgent => "single_agent",
            ConclusionKind::MultiAgent => "multi_agent",
        }
    }
}

impl fmt::Display for ConclusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// An attribution claim with its confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conclusion {
    pub kind: ConclusionKind,
    /// Blamed agent names; empty means no attribution. Single-agent
    /// conclusions never carry more than one name.
    pub attribution: Vec<String>,
    pub mistake_step: Option<i64>,
    /// In [0, 1]; clamped at parse time.
    pub confidence: f64,
    pub reasoning: String,
}

impl Conclusion {
    pub fn empty() -> Self {
        Self {
            kind: ConclusionKind::SingleAgent,
            attribution: Vec::new(),
            mistake_step: None,
            confidence: 0.0,
            reasoning: String::new(),
        }
    }
}

/// Fallback reasoning used when a verdict cannot be parsed.
pub const PARSE_FAILURE_REASONING: &str = "Failed to parse analysis response";

/// One analyst's structured verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub analysis_summary: String,
    pub agent_evaluations: Vec<AgentEvaluation>,
    pub primary_conclusion: Conclusion,
    pub alternative_hypotheses: Vec<Conclusion>,
    /// Panel slot that produced this verdict.
    pub analyst_id: usize,
    pub raw_response: String,
    pub token_usage: TokenUsage,
}

impl AnalysisResult {
    /// The shape returned when a response cannot be parsed.
    pub fn parse_fallback(raw_response: impl Into<String>) -> Self {
        Self {
            analysis_summary: "Error parsing response".to_string(),
            agent_evaluations: Vec::new(),
            primary_conclusion: Conclusion {
                kind: ConclusionKind::SingleAgent,
                attribution: Vec::new(),
                mistake_step: None,
                confidence: 0.0,
                reasoning: PARSE_FAILURE_REASONING.to_string(),
            },
            alternative_hypotheses: Vec::new(),
            analyst_id: 0,
            raw_response: raw_response.into(),
            token_usage: TokenUsage::default(),
        }
    }

    pub fn is_parse_fallback(&self) -> bool {
        self.primary_conclusion.reasoning == PARSE_FAILURE_REASONING
    }
}

/// Which attribution pass a panel run serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Unified,
    Agent,
    Step,
}

/// Phase plus the data its prompts need.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseSpec {
    Unified,
    Agent,
    /// Step pass conditioned on the agents blamed by the agent pass.
    Step {
        attributed: Vec<String>,
    },
}

impl PhaseSpec {
    pub fn phase(&self) -> Phase {
        match self {
            PhaseSpec::Unified => Phase::Unified,
            PhaseSpec::Agent => Phase::Agent,
            PhaseSpec::Step { .. } => Phase::Step,
        }
    }
}

/// Panel verdicts for one phase, in panel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAnalyses {
    pub phase: Phase,
    pub results: Vec<AnalysisResult>,
}

/// Render the conversation summary shown to every analyst: all steps in
/// full, then the first step's hierarchical context as a structural example
/// (truncated to 1000 characters).
pub fn compose_summary(trace: &InteractionTrace, contexts: &[HierarchicalContext]) -> String {
    let mut lines = Vec::new();
    lines.push("=== CONVERSATION AGENTS ===".to_string());
    for step in &trace.steps {
        lines.push(format!(
            "Step {} - {} ({}):",
            step.index, step.name, step.role
        ));
        lines.push(step.content.clone());
        lines.push(String::new());
    }
    lines.push("=== HIERARCHICAL CONTEXT EXAMPLE ===".to_string());
    if let Some(first) = contexts.first() {
        lines.push(
            "Context structure for the first step (showing hierarchical detail levels):"
                .to_string(),
        );
        let sample = format_hierarchical_context(first);
        if sample.chars().count() > 1000 {
            let truncated: String = sample.chars().take(1000).collect();
            lines.push(format!("{truncated}..."));
        } else {
            lines.push(sample);
        }
    }
    lines.join("\n")
}

/// Assemble (system, user) prompts for one analyst.
pub fn compose_analysis_prompt(
    summary: &str,
    trace: &InteractionTrace,
    profile: &AnalystProfile,
    phase: &PhaseSpec,
    with_ground_truth: bool,
    prompts: &PromptLibrary,
) -> (String, String) {
    let mut system = prompts.render(
        "objective_system",
        &[("focus_instructions", profile.focus_instructions.as_str())],
    );
    match phase {
        PhaseSpec::Unified => {}
        PhaseSpec::Agent => {
            system.push_str("\n\n");
            system.push_str(prompts.get("phase_agent").trim_end());
        }
        PhaseSpec::Step { attributed } => {
            let clause = if attributed.is_empty() {
                "The earlier agent-level pass was inconclusive; analyze all agents and \
                 determine the exact step where the mistake occurred."
                    .to_string()
            } else {
                format!(
                    "The earlier agent-level pass attributed the failure to: {}. Constrain \
                     your analysis to these agents and determine the exact step where the \
                     mistake occurred.",
                    attributed.join(", ")
                )
            };
            system.push_str("\n\n");
            system.push_str(
                prompts
                    .render("phase_step", &[("attributed_clause", clause.as_str())])
                    .trim_end(),
            );
        }
    }

    let gt = ground_truth_section(trace.ground_truth.as_deref(), with_ground_truth);
    let user = prompts.render(
        "objective_user",
        &[
            ("query", trace.query.as_str()),
            ("ground_truth_section", gt.as_str()),
            ("final_answer", trace.final_answer.as_str()),
            ("summary", summary),
        ],
    );
    (system, user)
}

fn str_or_empty(value: Option<&Value>) -> String {
    match value {
        Some(Value::String(s)) => s.clone(),
        _ => String::new(),
    }
}

fn clamped_number(value: Option<&Value>) -> f64 {
    match value.and_then(Value::as_f64) {
        Some(x) => x.clamp(0.0, 1.0),
        None => 0.0,
    }
}

fn exact_int(value: Option<&Value>) -> Option<i64> {
    value.and_then(Value::as_i64)
}

fn conclusion_from(value: Option<&Value>) -> Conclusion {
    let Some(Value::Object(obj)) = value else {
        return Conclusion::empty();
    };
    let kind = match obj.get("type").and_then(Value::as_str) {
        Some("multi_agent") => ConclusionKind::MultiAgent,
        _ => ConclusionKind::SingleAgent,
    };
    let mut attribution: Vec<String> = match obj.get("attribution") {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(Value::as_str)
            .map(str::to_string)
            .collect(),
        Some(Value::String(s)) => vec![s.clone()],
        _ => Vec::new(),
    };
    if kind == ConclusionKind::SingleAgent {
        attribution.truncate(1);
    }
    Conclusion {
        kind,
        attribution,
        mistake_step: exact_int(obj.get("mistake_step")),
        confidence: clamped_number(obj.get("confidence")),
        reasoning: str_or_empty(obj.get("reasoning")),
    }
}

fn evaluations_from(value: Option<&Value>) -> Vec<AgentEvaluation> {
    let Some(Value::Array(items)) = value else {
        return Vec::new();
    };
    items
        .iter()
        .filter_map(Value::as_object)
        .map(|obj| AgentEvaluation {
            agent_name: str_or_empty(obj.get("agent_name")),
            step_index: exact_int(obj.get("step_index")).unwrap_or(0),
            error_likelihood: clamped_number(obj.get("error_likelihood")),
            reasoning: str_or_empty(obj.get("reasoning")),
            evidence: str_or_empty(obj.get("evidence")),
        })
        .collect()
}

fn tagged_span(text: &str) -> Option<&str> {
    let start = text.find("<json>")? + "<json>".len();
    let end = text[start..].find("</json>")? + start;
    Some(&text[start..end])
}

/// First balanced top-level JSON object in the text, tracking string
/// literals and escapes.
fn balanced_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
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
}

fn result_from_object(obj: &Map<String, Value>, raw: &str) -> AnalysisResult {
    AnalysisResult {
        analysis_summary: str_or_empty(obj.get("analysis_summary")),
        agent_evaluations: evaluations_from(obj.get("agent_evaluations")),
        primary_conclusion: conclusion_from(obj.get("primary_conclusion")),
        alternative_hypotheses: match obj.get("alternative_hypotheses") {
            Some(Value::Array(items)) => items
                .iter()
                .map(|item| conclusion_from(Some(item)))
                .collect(),
            _ => Vec::new(),
        },
        analyst_id: 0,
        raw_response: raw.to_string(),
        token_usage: TokenUsage::default(),
    }
}

/// Parse a raw model reply into a verdict. Total: every failure collapses to
/// the fallback shape with the raw response preserved, and every numeric
/// field is clamped into [0, 1].
pub fn parse_analysis_output(text: &str) -> AnalysisResult {
    let span = tagged_span(text).or_else(|| balanced_object(text));
    let parsed = span.and_then(|s| serde_json::from_str::<Value>(s).ok());
    match parsed {
        Some(Value::Object(obj)) => result_from_object(&obj, text),
        _ => AnalysisResult::parse_fallback(text),
    }
}

/// Provider-independent knobs for one panel run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub model_id: String,
    /// Upper bound on concurrent provider calls.
    pub max_in_flight: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            model_id: String::new(),
            max_in_flight: 3,
        }
    }
}

/// Run every panel analyst over the same summary (one completion each, at
/// the analyst's temperature) and collect verdicts in panel order. A
/// provider failure degrades that analyst to the fallback verdict; the panel
/// never aborts.
#[allow(clippy::too_many_arguments)]
pub fn run_panel(
    backend: &dyn CompletionBackend,
    trace: &InteractionTrace,
    contexts: &[HierarchicalContext],
    panel: &[AnalystProfile],
    phase: &PhaseSpec,
    with_ground_truth: bool,
    prompts: &PromptLibrary,
    options: &RunOptions,
) -> PhaseAnalyses {
    let summary = compose_summary(trace, contexts);
    let requests: Vec<CompletionRequest> = panel
        .iter()
        .map(|profile| {
            let (system, user) = compose_analysis_prompt(
                &summary,
                trace,
                profile,
                phase,
                with_ground_truth,
                prompts,
            );
            CompletionRequest::new(system, user)
                .with_temperature(profile.temperature)
                .with_model_id(options.model_id.clone())
        })
        .collect();

    let mut results: Vec<Option<AnalysisResult>> = vec![None; panel.len()];
    let indices: Vec<usize> = (0..panel.len()).collect();
    for chunk in indices.chunks(options.max_in_flight.max(1)) {
        let outcomes: Vec<(usize, AnalysisResult)> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let request = &requests[i];
                    scope.spawn(move || (i, backend.complete(request)))
                })
                .collect();
            handles
                .into_iter()
                .map(|handle| {
                    let (i, outcome) = handle.join().expect("analyst thread panicked");
                    let mut result = match outcome {
                        Ok(response) => {
                            let mut parsed = parse_analysis_output(&response.text);
                            parsed.token_usage = response.token_usage;
                            parsed
                        }
                        Err(e) => {
                            log::warn!("analyst {i} provider call failed: {e}");
                            AnalysisResult::parse_fallback(format!("provider error: {e}"))
                        }
                    };
                    result.analyst_id = i;
                    (i, result)
                })
                .collect()
        });
        for (i, result) in outcomes {
            results[i] = Some(result);
        }
    }

    PhaseAnalyses {
        phase: phase.phase(),
        results: results
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{build_hierarchical_contexts, ContextType};
    use crate::gateway::ScriptedBackend;
    use crate::trace::AgentStep;

    fn trace_of(n: usize) -> InteractionTrace {
        InteractionTrace {
            steps: (0..n)
                .map(|i| AgentStep {
                    index: i,
                    name: format!("agent_{i}"),
                    role: "worker".to_string(),
                    content: format!("content {i}"),
                })
                .collect(),
            query: "what is 2+2".to_string(),
            final_answer: "5".to_string(),
            ground_truth: Some("4".to_string()),
        }
    }

    #[test]
    fn builtin_pool_has_all_six_roles() {
        let pool = builtin_profiles();
        assert_eq!(pool.len(), 6);
        let roles: Vec<_> = pool.iter().map(|p| p.role).collect();
        assert_eq!(roles, AnalystRole::ALL);
        assert!(pool[0]
            .focus_instructions
            .contains("high confidence thresholds"));
    }

    #[test]
    fn unknown_role_lookup_falls_back_to_general() {
        assert_eq!(
            focus_instructions_for("nonexistent"),
            AnalystRole::General.focus_instructions()
        );
    }

    #[test]
    fn sampling_is_seeded_and_distinct() {
        let pool = builtin_profiles();
        let a = sample_panel(&pool, 3, 7).unwrap();
        let b = sample_panel(&pool, 3, 7).unwrap();
        assert_eq!(a, b);

        let roles: std::collections::BTreeSet<_> = a.iter().map(|p| p.role).collect();
        assert_eq!(roles.len(), 3);

        let full = sample_panel(&pool, 6, 3).unwrap();
        let all: std::collections::BTreeSet<_> = full.iter().map(|p| p.role).collect();
        assert_eq!(all.len(), 6);
    }

    #[test]
    fn panel_temperatures_are_evenly_spaced() {
        let pool = builtin_profiles();
        let k3: Vec<f64> = sample_panel(&pool, 3, 0)
            .unwrap()
            .iter()
            .map(|p| p.temperature)
            .collect();
        assert_eq!(k3, vec![0.3, 0.6, 0.9]);

        let k6: Vec<f64> = sample_panel(&pool, 6, 0)
            .unwrap()
            .iter()
            .map(|p| p.temperature)
            .collect();
        assert_eq!(k6, vec![0.3, 0.42, 0.54, 0.66, 0.78, 0.9]);

        assert_eq!(sample_panel(&pool, 1, 0).unwrap()[0].temperature, 0.6);
    }

    #[test]
    fn oversized_panel_is_rejected() {
        let pool = builtin_profiles();
        assert!(sample_panel(&pool, 7, 0).is_err());
        assert!(sample_panel(&pool, 0, 0).is_err());
    }

    #[test]
    fn summary_lists_every_step_and_truncates_example() {
        let trace = trace_of(2);
        let contexts = build_hierarchical_contexts(&trace, ContextType::General);
        let summary = compose_summary(&trace, &contexts);
        assert!(summary.contains("Step 0 - agent_0 (worker):"));
        assert!(summary.contains("Step 1 - agent_1 (worker):"));
        assert!(summary.contains("=== HIERARCHICAL CONTEXT EXAMPLE ==="));
        assert_eq!(summary, compose_summary(&trace, &contexts));

        let mut long_trace = trace_of(2);
        long_trace.steps[1].content = "x".repeat(1500);
        let contexts = build_hierarchical_contexts(&long_trace, ContextType::General);
        let summary = compose_summary(&long_trace, &contexts);
        let sample = summary
            .split("Context structure for the first step (showing hierarchical detail levels):\n")
            .nth(1)
            .unwrap();
        assert!(sample.ends_with("..."));
        assert_eq!(sample.chars().count(), 1003);
    }

    #[test]
    fn prompt_respects_ground_truth_flag() {
        let trace = trace_of(2);
        let contexts = build_hierarchical_contexts(&trace, ContextType::General);
        let summary = compose_summary(&trace, &contexts);
        let profile = &builtin_profiles()[0];
        let prompts = PromptLibrary::builtin();

        let (system, with_gt) = compose_analysis_prompt(
            &summary,
            &trace,
            profile,
            &PhaseSpec::Unified,
            true,
            &prompts,
        );
        assert!(with_gt.contains("Ground Truth: 4"));
        assert!(system.contains("conservative analyst with high confidence thresholds"));
        assert!(system.contains("which step/turn in the conversation the mistake occurred"));

        let (_, without_gt) = compose_analysis_prompt(
            &summary,
            &trace,
            profile,
            &PhaseSpec::Unified,
            false,
            &prompts,
        );
        assert!(!without_gt.contains("Ground Truth:"));
    }

    #[test]
    fn phase_prompts_carry_their_focus() {
        let trace = trace_of(2);
        let contexts = build_hierarchical_contexts(&trace, ContextType::General);
        let summary = compose_summary(&trace, &contexts);
        let profile = &builtin_profiles()[5];
        let prompts = PromptLibrary::builtin();

        let (agent_system, _) =
            compose_analysis_prompt(&summary, &trace, profile, &PhaseSpec::Agent, true, &prompts);
        assert!(agent_system.contains("agent-level attribution"));

        let step = PhaseSpec::Step {
            attributed: vec!["agent_1".to_string()],
        };
        let (step_system, _) =
            compose_analysis_prompt(&summary, &trace, profile, &step, true, &prompts);
        assert!(step_system.contains("attributed the failure to: agent_1"));
    }

    #[test]
    fn parse_handles_tagged_payloads() {
        let text = r#"preamble <json>{"analysis_summary": "s",
            "agent_evaluations": [{"agent_name": "A", "step_index": 2,
                "error_likelihood": 1.7, "reasoning": "r", "evidence": "e"}],
            "primary_conclusion": {"type": "single_agent", "attribution": ["A"],
                "mistake_step": 2, "confidence": 0.8, "reasoning": "because"},
            "alternative_hypotheses": []}</json> trailer"#;
        let result = parse_analysis_output(text);
        assert_eq!(result.analysis_summary, "s");
        assert_eq!(result.agent_evaluations.len(), 1);
        assert_eq!(result.agent_evaluations[0].error_likelihood, 1.0);
        assert_eq!(result.primary_conclusion.attribution, ["A"]);
        assert_eq!(result.primary_conclusion.mistake_step, Some(2));
        assert_eq!(result.primary_conclusion.confidence, 0.8);
    }

    #[test]
    fn parse_falls_back_to_bare_object_scan() {
        let text = r#"The verdict is {"primary_conclusion": {"type": "multi_agent",
            "attribution": ["A", "B"], "confidence": 0.5, "reasoning": "shared"}} ok"#;
        let result = parse_analysis_output(text);
        assert_eq!(result.primary_conclusion.kind, ConclusionKind::MultiAgent);
        assert_eq!(result.primary_conclusion.attribution, ["A", "B"]);
    }

    #[test]
    fn parse_collapses_garbage_to_fallback() {
        let result = parse_analysis_output("total nonsense with no braces");
        assert!(result.is_parse_fallback());
        assert_eq!(result.primary_conclusion.confidence, 0.0);
        assert_eq!(result.raw_response, "total nonsense with no braces");
    }

    #[test]
    fn parse_truncates_single_agent_attribution() {
        let text = r#"<json>{"primary_conclusion": {"type": "single_agent",
            "attribution": ["A", "B", "C"], "confidence": 0.9, "reasoning": "r"}}</json>"#;
        let result = parse_analysis_output(text);
        assert_eq!(result.primary_conclusion.attribution, ["A"]);
    }

    #[test]
    fn parse_drops_non_integer_steps() {
        let text = r#"<json>{"primary_conclusion": {"type": "single_agent",
            "attribution": ["A"], "mistake_step": "three", "confidence": 0.9,
            "reasoning": "r"}}</json>"#;
        assert_eq!(
            parse_analysis_output(text).primary_conclusion.mistake_step,
            None
        );
    }

    #[test]
    fn panel_run_preserves_order_and_degrades_per_analyst() {
        let trace = trace_of(3);
        let contexts = build_hierarchical_contexts(&trace, ContextType::General);
        let pool = builtin_profiles();
        let panel = sample_panel(&pool, 3, 1).unwrap();
        let prompts = PromptLibrary::builtin();

        // fail only the analyst running at temperature 0.6 (panel slot 1)
        let backend = ScriptedBackend::new(|request| {
            if (request.temperature - 0.6).abs() < 1e-9 {
                Err(crate::gateway::GatewayError::Scripted("down".to_string()))
            } else {
                Ok(crate::gateway::CompletionResponse::text_only(
                    r#"<json>{"analysis_summary": "ok", "agent_evaluations": [],
                        "primary_conclusion": {"type": "single_agent", "attribution": ["agent_1"],
                        "mistake_step": 1, "confidence": 0.9, "reasoning": "clear"},
                        "alternative_hypotheses": []}</json>"#,
                ))
            }
        });

        let analyses = run_panel(
            &backend,
            &trace,
            &contexts,
            &panel,
            &PhaseSpec::Unified,
            true,
            &prompts,
            &RunOptions::default(),
        );
        assert_eq!(analyses.results.len(), 3);
        assert!(!analyses.results[0].is_parse_fallback());
        assert!(analyses.results[1].is_parse_fallback());
        assert!(!analyses.results[2].is_parse_fallback());
        let ids: Vec<_> = analyses.results.iter().map(|r| r.analyst_id).collect();
        assert_eq!(ids, [0, 1, 2]);
    }

    #[test]
    fn case_seed_mixes_id_into_seed() {
        assert_eq!(case_seed(1, "a"), case_seed(1, "a"));
        assert_ne!(case_seed(1, "a"), case_seed(1, "b"));
        assert_ne!(case_seed(1, "a"), case_seed(2, "a"));
    }
}
