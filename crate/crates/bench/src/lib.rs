//! Shared fixtures for the benchmark targets.

use echo_core::panel::{AnalysisResult, Conclusion, ConclusionKind};
use echo_core::trace::{AgentStep, InteractionTrace};

/// A trace with pattern-rich content, sized for benchmarking.
pub fn synthetic_trace(n: usize) -> InteractionTrace {
    InteractionTrace {
        steps: (0..n)
            .map(|i| AgentStep {
                index: i,
                name: format!("agent_{}", i % 5),
                role: "worker".to_string(),
                content: format!(
                    "Received the intermediate state from the previous stage. I conclude the \
                     partial result for chunk {i} is {v}. Therefore, we should carry {v} forward. \
                     Successfully completed stage {i} of the run.",
                    v = i * 7 % 13
                ),
            })
            .collect(),
        query: "benchmark task".to_string(),
        final_answer: "wrong".to_string(),
        ground_truth: Some("right".to_string()),
    }
}

/// A panel's worth of verdicts for consensus benchmarking.
pub fn synthetic_analyses(k: usize) -> Vec<AnalysisResult> {
    (0..k)
        .map(|id| AnalysisResult {
            analysis_summary: "bench".to_string(),
            agent_evaluations: Vec::new(),
            primary_conclusion: Conclusion {
                kind: if id % 3 == 0 {
                    ConclusionKind::MultiAgent
                } else {
                    ConclusionKind::SingleAgent
                },
                attribution: vec![format!("agent_{}", id % 5)],
                mistake_step: Some((id % 7) as i64),
                confidence: 0.3 + 0.1 * (id % 7) as f64,
                reasoning: "benchmark reasoning".to_string(),
            },
            alternative_hypotheses: Vec::new(),
            analyst_id: id,
            raw_response: String::new(),
            token_usage: Default::default(),
        })
        .collect()
}
