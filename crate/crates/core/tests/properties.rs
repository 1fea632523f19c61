//! Property tests for the crate's structural invariants.

use proptest::prelude::*;
use serde_json::json;

use echo_core::consensus::{aggregate, ConsensusConfig};
use echo_core::context::{
    build_hierarchical_contexts, extract_key_decision, obtain_milestones, summarize_agent,
    ContextType,
};
use echo_core::panel::{parse_analysis_output, AnalysisResult, Conclusion, ConclusionKind};
use echo_core::trace::{parse_trace, serialize_trace, AgentStep, InteractionTrace};

fn context_type(i: usize) -> ContextType {
    ContextType::ALL[i % 4]
}

fn step_strategy() -> impl Strategy<Value = (String, String, String)> {
    (
        "[A-Za-z][A-Za-z0-9_]{0,7}",
        proptest::string::string_regex("[a-z]{0,6}").unwrap(),
        proptest::string::string_regex("[ -~\\n]{0,60}").unwrap(),
    )
}

fn trace_of(n: usize) -> InteractionTrace {
    InteractionTrace {
        steps: (0..n)
            .map(|i| AgentStep {
                index: i,
                name: format!("agent_{i}"),
                role: String::new(),
                content: String::new(),
            })
            .collect(),
        query: String::new(),
        final_answer: String::new(),
        ground_truth: None,
    }
}

proptest! {
    #[test]
    fn trace_parse_serialize_round_trip(
        steps in proptest::collection::vec(step_strategy(), 1..12),
        query in "[ -~]{0,40}",
        final_answer in "[ -~]{0,40}",
        ground_truth in proptest::option::of("[ -~]{0,40}"),
    ) {
        let history: Vec<_> = steps
            .iter()
            .map(|(name, role, content)| json!({"name": name, "role": role, "content": content}))
            .collect();
        let mut doc = json!({"question": query, "final_answer": final_answer, "history": history});
        if let Some(gt) = &ground_truth {
            doc["ground_truth"] = json!(gt);
        }
        let parsed = parse_trace(&doc).unwrap();
        prop_assert_eq!(parsed.steps.len(), steps.len());
        let indices: Vec<usize> = parsed.steps.iter().map(|s| s.index).collect();
        prop_assert_eq!(indices, (0..steps.len()).collect::<Vec<_>>());

        let reparsed = parse_trace(&serialize_trace(&parsed)).unwrap();
        prop_assert_eq!(parsed, reparsed);
    }

    #[test]
    fn extraction_budgets_hold_for_arbitrary_text(
        text in proptest::string::string_regex(".{0,300}").unwrap(),
        ct_index in 0usize..4,
    ) {
        let ct = context_type(ct_index);
        prop_assert!(extract_key_decision(&text, 50, ct).split_whitespace().count() <= 50);
        prop_assert!(summarize_agent(&text, 20, ct).split_whitespace().count() <= 20);
        prop_assert!(obtain_milestones(&text, 15, ct).split_whitespace().count() <= 15);
    }

    #[test]
    fn blank_input_always_yields_fallback_literal(
        blanks in proptest::string::string_regex("[ \\t\\n\\r]{0,20}").unwrap(),
        ct_index in 0usize..4,
    ) {
        let ct = context_type(ct_index);
        prop_assert_eq!(extract_key_decision(&blanks, 50, ct), "No content available");
        prop_assert_eq!(summarize_agent(&blanks, 20, ct), "No content available");
        prop_assert_eq!(obtain_milestones(&blanks, 15, ct), "No milestones available");
    }

    #[test]
    fn parsed_confidence_is_clamped(confidence in proptest::num::f64::NORMAL) {
        let payload = format!(
            "<json>{{\"primary_conclusion\": {{\"type\": \"single_agent\", \
             \"attribution\": [\"A\"], \"confidence\": {confidence}, \"reasoning\": \"r\"}}}}</json>"
        );
        let result = parse_analysis_output(&payload);
        prop_assert_eq!(result.primary_conclusion.confidence, confidence.clamp(0.0, 1.0));
    }

    #[test]
    fn context_partition_holds_for_random_sizes(n in 1usize..60) {
        let trace = trace_of(n);
        for (target, ctx) in build_hierarchical_contexts(&trace, ContextType::General)
            .iter()
            .enumerate()
        {
            let mut covered = vec![target];
            for (_, entries) in ctx.levels() {
                covered.extend(entries.iter().map(|e| e.index));
            }
            covered.sort_unstable();
            prop_assert_eq!(covered, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn consensus_winner_is_scale_insensitive(
        votes in proptest::collection::vec(
            (any::<bool>(), 0usize..3, proptest::option::of(0i64..8), 0u8..=20),
            0..6,
        ),
        scale_index in 0usize..3,
    ) {
        let pool = ["alpha", "bravo", "charlie", "delta"];
        let scale = [1.0, 0.5, 0.25][scale_index];
        let build = |factor: f64| -> Vec<AnalysisResult> {
            votes
                .iter()
                .enumerate()
                .map(|(id, &(multi, names, step, grid))| {
                    let kind = if multi {
                        ConclusionKind::MultiAgent
                    } else {
                        ConclusionKind::SingleAgent
                    };
                    let count = if multi { names } else { names.min(1) };
                    AnalysisResult {
                        analysis_summary: String::new(),
                        agent_evaluations: Vec::new(),
                        primary_conclusion: Conclusion {
                            kind,
                            attribution: (0..count).map(|i| pool[(id + i) % 4].to_string()).collect(),
                            mistake_step: step,
                            confidence: grid as f64 * 0.05 * factor,
                            reasoning: String::new(),
                        },
                        alternative_hypotheses: Vec::new(),
                        analyst_id: id,
                        raw_response: String::new(),
                        token_usage: Default::default(),
                    }
                })
                .collect()
        };
        // δ = 0 keeps every vote on both sides; scaling by a power of two is
        // exact, so the argmax decisions cannot move.
        let config = ConsensusConfig { min_confidence_threshold: 0.0 };
        let trace = trace_of(8);
        let base = aggregate(&build(1.0), &config, &trace);
        let scaled = aggregate(&build(scale), &config, &trace);
        prop_assert_eq!(base.conclusion.kind, scaled.conclusion.kind);
        prop_assert_eq!(base.conclusion.attribution, scaled.conclusion.attribution);
        prop_assert_eq!(base.conclusion.mistake_step, scaled.conclusion.mistake_step);
    }
}
