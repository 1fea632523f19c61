//! Confidence-weighted consensus over analyst verdicts: threshold filtering,
//! weighted kind/agent/step votes, disagreement diagnostics, and reasoning
//! synthesis.
//!
//! Tie-breaking is pinned so results never depend on map iteration order:
//! kind ties resolve to single-agent, agent ties lexicographically by name,
//! step ties to the smallest index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::panel::{AnalysisResult, Conclusion, ConclusionKind};
use crate::trace::InteractionTrace;

/// Reasoning literal of the empty consensus result.
pub const NO_ANALYSES_REASONING: &str = "No objective analyses provided";
/// Reasoning literal when votes exist but none carries any weight.
pub const NO_CONSENSUS_REASONING: &str = "No clear consensus reached";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    /// δ: conclusions below this confidence do not vote.
    pub min_confidence_threshold: f64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            min_confidence_threshold: 0.3,
        }
    }
}

/// One post-filter vote (confidence ≥ δ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub confidence: f64,
    pub attribution: Vec<String>,
    pub mistake_step: Option<i64>,
    pub reasoning: String,
    pub analyst_id: usize,
}

/// Diagnostics over the filtered votes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementAnalysis {
    pub high_disagreement: bool,
    pub num_different_conclusions: usize,
    /// max σ − min σ over all filtered votes (0 when none).
    pub confidence_spread: f64,
    /// φ: true when high disagreement exists or the spread exceeds 0.5.
    pub requires_review: bool,
}

/// One analyst's assessment of one agent, kept for the evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationItem {
    pub error_likelihood: f64,
    pub reasoning: String,
    pub evidence: String,
    pub analyst_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEvaluationSummary {
    pub avg_error_likelihood: f64,
    pub num_evaluations: usize,
    pub evaluations: Vec<EvaluationItem>,
}

/// A retained secondary hypothesis, tagged with its analyst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeHypothesis {
    pub conclusion: Conclusion,
    pub analyst_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingDetails {
    pub conclusion_votes: BTreeMap<ConclusionKind, Vec<Vote>>,
    /// Summed confidence per proposed step, including out-of-bounds
    /// proposals (they are excluded from the winner, not from the tally).
    pub step_votes: BTreeMap<i64, f64>,
    /// Total confidence of the winning kind.
    pub best_weighted_score: f64,
    pub disagreement_analysis: DisagreementAnalysis,
}

/// Aggregated attribution: ω_a and ω_s plus full voting provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub conclusion: Conclusion,
    pub voting_details: VotingDetails,
    pub agent_evaluations_summary: BTreeMap<String, AgentEvaluationSummary>,
    pub alternative_hypotheses: Vec<AlternativeHypothesis>,
    pub num_analysts: usize,
    pub voting_method: String,
}

fn empty_result(num_analysts: usize) -> ConsensusResult {
    ConsensusResult {
        conclusion: Conclusion {
            kind: ConclusionKind::SingleAgent,
            attribution: Vec::new(),
            mistake_step: None,
            confidence: 0.0,
            reasoning: NO_ANALYSES_REASONING.to_string(),
        },
        voting_details: VotingDetails {
            conclusion_votes: BTreeMap::new(),
            step_votes: BTreeMap::new(),
            best_weighted_score: 0.0,
            disagreement_analysis: DisagreementAnalysis {
                high_disagreement: false,
                num_different_conclusions: 0,
                confidence_spread: 0.0,
                requires_review: true,
            },
        },
        agent_evaluations_summary: BTreeMap::new(),
        alternative_hypotheses: Vec::new(),
        num_analysts,
        voting_method: "weighted_confidence_consensus".to_string(),
    }
}

/// Primary conclusions with σ ≥ δ, grouped by kind in analyst order.
pub fn filter_votes(
    analyses: &[AnalysisResult],
    config: &ConsensusConfig,
) -> BTreeMap<ConclusionKind, Vec<Vote>> {
    let mut votes: BTreeMap<ConclusionKind, Vec<Vote>> = BTreeMap::new();
    for analysis in analyses {
        let conclusion = &analysis.primary_conclusion;
        if conclusion.confidence >= config.min_confidence_threshold {
            votes.entry(conclusion.kind).or_default().push(Vote {
                confidence: conclusion.confidence,
                attribution: conclusion.attribution.clone(),
                mistake_step: conclusion.mistake_step,
                reasoning: conclusion.reasoning.clone(),
                analyst_id: analysis.analyst_id,
            });
        }
    }
    votes
}

/// Sum confidence per proposed step and pick the winner among steps inside
/// [0, n). Ties go to the smallest index; no valid steps means no winner.
pub fn vote_step(votes: &[Vote], n: usize) -> (Option<i64>, BTreeMap<i64, f64>) {
    let mut sums: BTreeMap<i64, f64> = BTreeMap::new();
    for vote in votes {
        if let Some(step) = vote.mistake_step {
            *sums.entry(step).or_insert(0.0) += vote.confidence;
        }
    }
    let winner = sums
        .iter()
        .filter(|(&step, _)| step >= 0 && (step as usize) < n)
        .max_by(|(step_a, conf_a), (step_b, conf_b)| {
            conf_a.total_cmp(conf_b).then_with(|| step_b.cmp(step_a))
        })
        .map(|(&step, _)| step);
    (winner, sums)
}

/// Conclusion diversity and confidence spread over the filtered votes.
pub fn analyze_disagreements(
    votes_by_kind: &BTreeMap<ConclusionKind, Vec<Vote>>,
) -> DisagreementAnalysis {
    let num_different_conclusions = votes_by_kind.len();
    let high_disagreement =
        num_different_conclusions > 2 && votes_by_kind.values().all(|v| !v.is_empty());

    let mut min_conf: Option<f64> = None;
    let mut max_conf: Option<f64> = None;
    for vote in votes_by_kind.values().flatten() {
        min_conf = Some(min_conf.map_or(vote.confidence, |m: f64| m.min(vote.confidence)));
        max_conf = Some(max_conf.map_or(vote.confidence, |m: f64| m.max(vote.confidence)));
    }
    let confidence_spread = match (min_conf, max_conf) {
        (Some(lo), Some(hi)) => hi - lo,
        _ => 0.0,
    };

    DisagreementAnalysis {
        high_disagreement,
        num_different_conclusions,
        confidence_spread,
        requires_review: high_disagreement || confidence_spread > 0.5,
    }
}

/// Per-agent mean error likelihood across every analyst that mentioned the
/// agent. Unnamed evaluations are skipped.
pub fn summarize_agent_evaluations(
    analyses: &[AnalysisResult],
) -> BTreeMap<String, AgentEvaluationSummary> {
    let mut by_agent: BTreeMap<String, Vec<EvaluationItem>> = BTreeMap::new();
    for analysis in analyses {
        for evaluation in &analysis.agent_evaluations {
            if evaluation.agent_name.is_empty() {
                continue;
            }
            by_agent
                .entry(evaluation.agent_name.clone())
                .or_default()
                .push(EvaluationItem {
                    error_likelihood: evaluation.error_likelihood,
                    reasoning: evaluation.reasoning.clone(),
                    evidence: evaluation.evidence.clone(),
                    analyst_id: analysis.analyst_id,
                });
        }
    }
    by_agent
        .into_iter()
        .map(|(agent, evaluations)| {
            let sum: f64 = evaluations.iter().map(|e| e.error_likelihood).sum();
            let summary = AgentEvaluationSummary {
                avg_error_likelihood: sum / evaluations.len() as f64,
                num_evaluations: evaluations.len(),
                evaluations,
            };
            (agent, summary)
        })
        .collect()
}

fn synthesize_reasoning(votes: &[Vote], avg_confidence: f64) -> String {
    let num_votes = votes.len();
    let reasonings: Vec<&str> = votes
        .iter()
        .map(|v| v.reasoning.as_str())
        .filter(|r| !r.is_empty())
        .collect();
    if reasonings.is_empty() {
        return format!(
            "Consensus reached by {num_votes} analysts with average confidence {avg_confidence:.2}."
        );
    }
    let first: String = reasonings[0].chars().take(200).collect();
    let mut synthesis = format!(
        "Consensus reached by {num_votes} analysts (avg confidence: {avg_confidence:.2}). \
         Primary reasoning: {first}..."
    );
    if reasonings.len() > 1 {
        synthesis.push_str(&format!(
            " Additional supporting analysis from {} other analysts.",
            reasonings.len() - 1
        ));
    }
    synthesis
}

fn collect_alternatives(analyses: &[AnalysisResult]) -> Vec<AlternativeHypothesis> {
    let mut alternatives: Vec<AlternativeHypothesis> = analyses
        .iter()
        .flat_map(|analysis| {
            analysis
                .alternative_hypotheses
                .iter()
                .map(|conclusion| AlternativeHypothesis {
                    conclusion: conclusion.clone(),
                    analyst_id: analysis.analyst_id,
                })
        })
        .collect();
    alternatives.truncate(5);
    alternatives
}

/// Aggregate analyst verdicts into a final attribution. Total function:
/// empty input and fully filtered input both collapse to the empty result
/// (the latter keeping `num_analysts`).
pub fn aggregate(
    analyses: &[AnalysisResult],
    config: &ConsensusConfig,
    trace: &InteractionTrace,
) -> ConsensusResult {
    if analyses.is_empty() {
        return empty_result(0);
    }
    let votes_by_kind = filter_votes(analyses, config);
    if votes_by_kind.values().all(|v| v.is_empty()) {
        return empty_result(analyses.len());
    }

    // Winning kind by strictly greater total confidence; iterating in kind
    // order makes ties keep single-agent.
    let mut best_kind: Option<ConclusionKind> = None;
    let mut best_weighted_score = 0.0_f64;
    for (&kind, votes) in &votes_by_kind {
        let total: f64 = votes.iter().map(|v| v.confidence).sum();
        if total > best_weighted_score {
            best_weighted_score = total;
            best_kind = Some(kind);
        }
    }

    let agent_evaluations_summary = summarize_agent_evaluations(analyses);
    let alternative_hypotheses = collect_alternatives(analyses);
    let disagreement_analysis = analyze_disagreements(&votes_by_kind);

    let Some(kind) = best_kind else {
        // Votes exist but every one carries zero confidence.
        return ConsensusResult {
            conclusion: Conclusion {
                kind: ConclusionKind::SingleAgent,
                attribution: Vec::new(),
                mistake_step: None,
                confidence: 0.0,
                reasoning: NO_CONSENSUS_REASONING.to_string(),
            },
            voting_details: VotingDetails {
                conclusion_votes: votes_by_kind,
                step_votes: BTreeMap::new(),
                best_weighted_score: 0.0,
                disagreement_analysis,
            },
            agent_evaluations_summary,
            alternative_hypotheses,
            num_analysts: analyses.len(),
            voting_method: "weighted_confidence_consensus".to_string(),
        };
    };

    let winning_votes = &votes_by_kind[&kind];
    let avg_confidence = best_weighted_score / winning_votes.len() as f64;

    // ω_a: summed confidence per blamed agent, accumulated in vote order.
    let mut agent_sums: BTreeMap<String, f64> = BTreeMap::new();
    for vote in winning_votes {
        for name in &vote.attribution {
            *agent_sums.entry(name.clone()).or_insert(0.0) += vote.confidence;
        }
    }
    let attribution: Vec<String> = match kind {
        ConclusionKind::SingleAgent => agent_sums
            .iter()
            .max_by(|(name_a, conf_a), (name_b, conf_b)| {
                conf_a.total_cmp(conf_b).then_with(|| name_b.cmp(name_a))
            })
            .map(|(name, _)| vec![name.clone()])
            .unwrap_or_default(),
        ConclusionKind::MultiAgent => {
            let mut ranked: Vec<(&String, f64)> = agent_sums.iter().map(|(n, &c)| (n, c)).collect();
            ranked.sort_by(|(name_a, conf_a), (name_b, conf_b)| {
                conf_b.total_cmp(conf_a).then_with(|| name_a.cmp(name_b))
            });
            ranked
                .into_iter()
                .filter(|(_, conf)| *conf >= config.min_confidence_threshold)
                .map(|(name, _)| name.clone())
                .collect()
        }
    };

    let (mistake_step, step_votes) = vote_step(winning_votes, trace.len());

    ConsensusResult {
        conclusion: Conclusion {
            kind,
            attribution,
            mistake_step,
            confidence: avg_confidence,
            reasoning: synthesize_reasoning(winning_votes, avg_confidence),
        },
        voting_details: VotingDetails {
            conclusion_votes: votes_by_kind.clone(),
            step_votes,
            best_weighted_score,
            disagreement_analysis,
        },
        agent_evaluations_summary,
        alternative_hypotheses,
        num_analysts: analyses.len(),
        voting_method: "weighted_confidence_consensus".to_string(),
    }
}
