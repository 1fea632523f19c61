//! Scoring harness: per-case outcomes, accuracy and tolerance curves, token
//! accounting, analytic random baselines, pairwise chi-squared significance,
//! and the experiment runner that ties strategies to datasets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::baselines::{
    all_at_once, binary_search, fixed_window_judge, hierarchical_judge, step_by_step, Attribution,
    ProviderCtx,
};
use crate::gateway::{CompletionBackend, TokenUsage};
use crate::pipeline::{run_echo, PipelineConfig, Toolkit};
use crate::trace::{GoldAnnotation, LabeledCase, Subset};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no outcomes to score")]
    EmptyOutcomes,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("failed to write run artifacts: {0}")]
    Io(#[from] std::io::Error),
}

/// Whether analysts saw the correct answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    WithGt,
    WithoutGt,
}

impl Condition {
    pub fn id(&self) -> &'static str {
        match self {
            Condition::WithGt => "with_gt",
            Condition::WithoutGt => "without_gt",
        }
    }

    pub fn with_ground_truth(&self) -> bool {
        matches!(self, Condition::WithGt)
    }

    pub const BOTH: [Condition; 2] = [Condition::WithGt, Condition::WithoutGt];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// One scored case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub predicted: Attribution,
    pub gold: GoldAnnotation,
    pub agent_correct: bool,
    /// |predicted − gold| step distance; absent when no step was predicted.
    pub step_error: Option<u64>,
    pub tokens: TokenUsage,
    /// True when the strategy degraded to its failure sentinel.
    pub failed: bool,
}

fn normalize_agent(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Score one prediction against gold. Agent matching is case-insensitive
/// exact match after trimming; unknown or absent predictions count as
/// incorrect.
pub fn outcome_for(case: &LabeledCase, predicted: Attribution) -> CaseOutcome {
    let agent_correct = !predicted.is_unknown()
        && normalize_agent(&predicted.mistake_agent) == normalize_agent(&case.gold.mistake_agent);
    if !agent_correct && !predicted.is_unknown() {
        log::debug!(
            "agent mismatch on {}: predicted `{}`, gold `{}`",
            case.case_id,
            predicted.mistake_agent,
            case.gold.mistake_agent
        );
    }
    let step_error = predicted
        .mistake_step
        .map(|s| (s as u64).abs_diff(case.gold.mistake_step as u64));
    let failed = predicted.is_unknown();
    CaseOutcome {
        case_id: case.case_id.clone(),
        tokens: predicted.token_usage,
        predicted,
        gold: case.gold.clone(),
        agent_correct,
        step_error,
        failed,
    }
}

/// Per-strategy accuracy metrics for one (subset, condition) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub condition: Condition,
    pub subset: Subset,
    pub n_cases: usize,
    /// Cases in the accuracy denominator (differs from `n_cases` only when
    /// failed cases are excluded).
    pub n_scored: usize,
    pub n_failed: usize,
    pub agent_accuracy: f64,
    pub step_accuracy_exact: f64,
    /// step@k for k = 1..=tolerance_max; non-decreasing in k.
    pub step_accuracy_at: Vec<f64>,
    pub total_tokens: TokenUsage,
    pub mean_tokens: f64,
    /// Agent-level chi-squared p-values against the other strategies in the
    /// same cell.
    pub pairwise_agent_p: BTreeMap<String, f64>,
    /// Step-exact chi-squared p-values against the other strategies.
    pub pairwise_step_p: BTreeMap<String, f64>,
}

/// Aggregate outcomes into a report. Failed cases count as incorrect unless
/// `exclude_failed` removes them from the denominator.
pub fn score(
    strategy: &str,
    condition: Condition,
    subset: Subset,
    outcomes: &[CaseOutcome],
    tolerance_max: usize,
    exclude_failed: bool,
) -> Result<EvalReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyOutcomes);
    }
    let n_cases = outcomes.len();
    let n_failed = outcomes.iter().filter(|o| o.failed).count();
    let scored: Vec<&CaseOutcome> = if exclude_failed {
        outcomes.iter().filter(|o| !o.failed).collect()
    } else {
        outcomes.iter().collect()
    };
    let n_scored = scored.len();
    let denom = n_scored as f64;

    let fraction = |count: usize| {
        if n_scored == 0 {
            0.0
        } else {
            count as f64 / denom
        }
    };
    let agent_accuracy = fraction(scored.iter().filter(|o| o.agent_correct).count());
    let step_at = |k: u64| {
        fraction(
            scored
                .iter()
                .filter(|o| o.step_error.is_some_and(|e| e <= k))
                .count(),
        )
    };

    let mut total_tokens = TokenUsage::default();
    for outcome in outcomes {
        total_tokens.add(outcome.tokens);
    }

    Ok(EvalReport {
        strategy: strategy.to_string(),
        condition,
        subset,
        n_cases,
        n_scored,
        n_failed,
        agent_accuracy,
        step_accuracy_exact: step_at(0),
        step_accuracy_at: (1..=tolerance_max as u64).map(step_at).collect(),
        total_tokens,
        mean_tokens: total_tokens.total() as f64 / n_cases as f64,
        pairwise_agent_p: BTreeMap::new(),
        pairwise_step_p: BTreeMap::new(),
    })
}

/// Analytic expectation of a uniform random guesser (no sampling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub agent_accuracy: f64,
    pub step_accuracy_exact: f64,
    pub step_accuracy_at: Vec<f64>,
}

/// Per case the agent chance is 1/#distinct-names and the step chance is
/// 1/n; step@k follows from the size of the tolerance window around gold.
/// Reported values are means over the cases.
pub fn random_baseline(cases: &[LabeledCase], tolerance_max: usize) -> RandomBaseline {
    if cases.is_empty() {
        return RandomBaseline {
            agent_accuracy: 0.0,
            step_accuracy_exact: 0.0,
            step_accuracy_at: vec![0.0; tolerance_max],
        };
    }
    let m = cases.len() as f64;
    let agent_accuracy = cases
        .iter()
        .map(|c| 1.0 / c.trace.agent_names().len() as f64)
        .sum::<f64>()
        / m;
    let step_within = |k: usize| {
        cases
            .iter()
            .map(|c| {
                let n = c.trace.len();
                let gold = c.gold.mistake_step;
                let lo = gold.saturating_sub(k);
                let hi = (gold + k).min(n - 1);
                (hi - lo + 1) as f64 / n as f64
            })
            .sum::<f64>()
            / m
    };
    RandomBaseline {
        agent_accuracy,
        step_accuracy_exact: step_within(0),
        step_accuracy_at: (1..=tolerance_max).map(step_within).collect(),
    }
}

/// Two-proportion chi-squared p-value (2×2 contingency, 1 dof). No
/// continuity correction unless requested; degenerate tables (a zero margin)
/// yield p = 1.0.
///
/// Uses the 2×2 closed form N·(O11·O22 − O12·O21)²/(R1·R2·C1·C2), which is
/// exactly symmetric under argument swap in floating point.
pub fn chi_squared_p(a: (u64, u64), b: (u64, u64), continuity_correction: bool) -> f64 {
    let (a_correct, a_total) = a;
    let (b_correct, b_total) = b;
    let o11 = a_correct.min(a_total) as f64;
    let o12 = (a_total - a_correct.min(a_total)) as f64;
    let o21 = b_correct.min(b_total) as f64;
    let o22 = (b_total - b_correct.min(b_total)) as f64;

    let (r1, r2) = (a_total as f64, b_total as f64);
    let (c1, c2) = (o11 + o21, o12 + o22);
    let n = r1 + r2;
    if n == 0.0 || r1 == 0.0 || r2 == 0.0 || c1 == 0.0 || c2 == 0.0 {
        return 1.0;
    }

    let mut deviation = (o11 * o22 - o12 * o21).abs();
    if continuity_correction {
        deviation = (deviation - n / 2.0).max(0.0);
    }
    let statistic = n * deviation * deviation / (r1 * r2 * c1 * c2);
    // Survival function of chi-squared with 1 dof.
    libm::erfc((statistic / 2.0).sqrt())
}

/// Attribution strategies the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Echo,
    AllAtOnce,
    StepByStep,
    BinarySearch,
    FixedWindowJudge,
    HierarchicalJudge,
    /// Copies gold; a harness self-check that must score 1.0 everywhere.
    Oracle,
    /// Analytic expectation; makes no provider calls.
    Random,
}

impl StrategyKind {
    pub fn id(&self) -> &'static str {
        match self {
            StrategyKind::Echo => "echo",
            StrategyKind::AllAtOnce => "all_at_once",
            StrategyKind::StepByStep => "step_by_step",
            StrategyKind::BinarySearch => "binary_search",
            StrategyKind::FixedWindowJudge => "fixed_window_judge",
            StrategyKind::HierarchicalJudge => "hierarchical_judge",
            StrategyKind::Oracle => "oracle",
            StrategyKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<StrategyKind> {
        [
            StrategyKind::Echo,
            StrategyKind::AllAtOnce,
            StrategyKind::StepByStep,
            StrategyKind::BinarySearch,
            StrategyKind::FixedWindowJudge,
            StrategyKind::HierarchicalJudge,
            StrategyKind::Oracle,
            StrategyKind::Random,
        ]
        .into_iter()
        .find(|k| k.id() == s)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Run one strategy over one case. Returns the attribution plus an optional
/// strategy-specific detail document for the audit trail.
pub fn run_strategy(
    kind: StrategyKind,
    backend: &dyn CompletionBackend,
    toolkit: &Toolkit,
    case: &LabeledCase,
    with_ground_truth: bool,
    pipeline: &PipelineConfig,
) -> (Attribution, Option<Value>) {
    let ctx = ProviderCtx {
        backend,
        prompts: &toolkit.prompts,
        model_id: &pipeline.model_id,
    };
    match kind {
        StrategyKind::Echo => {
            let mut config = pipeline.clone();
            config.with_ground_truth = with_ground_truth;
            match run_echo(backend, &case.trace, &config, toolkit, Some(&case.case_id)) {
                Ok(outcome) => {
                    let detail = json!({
                        "consensus": outcome.consensus,
                        "panel": outcome.panel,
                        "provider_calls": outcome.provider_calls,
                    });
                    (outcome.attribution, Some(detail))
                }
                Err(e) => (
                    Attribution::unknown(format!("pipeline error: {e}"), TokenUsage::default()),
                    None,
                ),
            }
        }
        StrategyKind::AllAtOnce => (all_at_once(&ctx, &case.trace, with_ground_truth), None),
        StrategyKind::StepByStep => (step_by_step(&ctx, &case.trace, with_ground_truth), None),
        StrategyKind::BinarySearch => (binary_search(&ctx, &case.trace, with_ground_truth), None),
        StrategyKind::FixedWindowJudge => (
            fixed_window_judge(&ctx, &case.trace, with_ground_truth),
            None,
        ),
        StrategyKind::HierarchicalJudge => (
            hierarchical_judge(
                &ctx,
                &case.trace,
                with_ground_truth,
                pipeline.context_type,
                &toolkit.patterns,
            ),
            None,
        ),
        StrategyKind::Oracle => (
            Attribution {
                mistake_agent: case.gold.mistake_agent.clone(),
                mistake_step: Some(case.gold.mistake_step),
                mistake_reason: case.gold.mistake_reason.clone(),
                token_usage: TokenUsage::default(),
            },
            None,
        ),
        StrategyKind::Random => (
            Attribution::unknown("random baseline is analytic", TokenUsage::default()),
            None,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategies: Vec<StrategyKind>,
    pub conditions: Vec<Condition>,
    pub subsets: Vec<Subset>,
    pub tolerance_max: usize,
    pub pipeline: PipelineConfig,
    /// When true, failed cases leave the accuracy denominator (default:
    /// they count as incorrect).
    pub exclude_failed: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategies: vec![StrategyKind::Echo],
            conditions: Condition::BOTH.to_vec(),
            subsets: vec![Subset::HandCrafted, Subset::AlgorithmGenerated],
            tolerance_max: 5,
            pipeline: PipelineConfig::default(),
            exclude_failed: false,
        }
    }
}

/// One audited case run inside an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRecord {
    pub outcome: CaseOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutput {
    pub reports: Vec<EvalReport>,
    /// Case records keyed by `strategy/subset/condition`.
    pub cases: BTreeMap<String, Vec<CaseRecord>>,
}

pub fn cell_key(strategy: StrategyKind, subset: Subset, condition: Condition) -> String {
    format!("{strategy}/{subset}/{condition}")
}

/// Cartesian run over strategies × conditions × subsets. Per-case artifacts
/// are persisted under `run_dir` when given; everything persisted is
/// timestamp-free so a replayed run is byte-identical.
pub fn run_experiment(
    config: &ExperimentConfig,
    datasets: &BTreeMap<Subset, Vec<LabeledCase>>,
    backend: &dyn CompletionBackend,
    toolkit: &Toolkit,
    run_dir: Option<&Path>,
) -> Result<ExperimentOutput, EvalError> {
    if config.strategies.is_empty() {
        return Err(EvalError::InvalidConfig(
            "no strategies selected".to_string(),
        ));
    }
    if config.pipeline.panel_size == 0 || config.pipeline.panel_size > 6 {
        return Err(EvalError::InvalidConfig(format!(
            "panel size {} is outside 1..=6",
            config.pipeline.panel_size
        )));
    }
    let live_subsets: Vec<Subset> = config
        .subsets
        .iter()
        .copied()
        .filter(|s| datasets.get(s).is_some_and(|cases| !cases.is_empty()))
        .collect();
    if live_subsets.is_empty() {
        return Err(EvalError::EmptyDataset);
    }

    let mut reports = Vec::new();
    let mut cases_by_cell: BTreeMap<String, Vec<CaseRecord>> = BTreeMap::new();

    // (correct, denominator) tallies per strategy, for the pairwise
    // significance pass
    struct CellTally {
        strategy: StrategyKind,
        agent: (u64, u64),
        step: (u64, u64),
    }

    for &subset in &live_subsets {
        let cases = &datasets[&subset];
        for &condition in &config.conditions {
            let mut tallies: Vec<CellTally> = Vec::new();

            for &strategy in &config.strategies {
                if strategy == StrategyKind::Random {
                    let analytic = random_baseline(cases, config.tolerance_max);
                    reports.push(EvalReport {
                        strategy: strategy.id().to_string(),
                        condition,
                        subset,
                        n_cases: cases.len(),
                        n_scored: cases.len(),
                        n_failed: 0,
                        agent_accuracy: analytic.agent_accuracy,
                        step_accuracy_exact: analytic.step_accuracy_exact,
                        step_accuracy_at: analytic.step_accuracy_at,
                        total_tokens: TokenUsage::default(),
                        mean_tokens: 0.0,
                        pairwise_agent_p: BTreeMap::new(),
                        pairwise_step_p: BTreeMap::new(),
                    });
                    continue;
                }

                let mut records = Vec::with_capacity(cases.len());
                for case in cases {
                    let (attribution, detail) = run_strategy(
                        strategy,
                        backend,
                        toolkit,
                        case,
                        condition.with_ground_truth(),
                        &config.pipeline,
                    );
                    records.push(CaseRecord {
                        outcome: outcome_for(case, attribution),
                        detail,
                    });
                }
                let outcomes: Vec<CaseOutcome> =
                    records.iter().map(|r| r.outcome.clone()).collect();
                let report = score(
                    strategy.id(),
                    condition,
                    subset,
                    &outcomes,
                    config.tolerance_max,
                    config.exclude_failed,
                )?;
                let denom = report.n_scored as u64;
                let agent_correct = outcomes.iter().filter(|o| o.agent_correct).count() as u64;
                let step_exact = outcomes.iter().filter(|o| o.step_error == Some(0)).count() as u64;
                tallies.push(CellTally {
                    strategy,
                    agent: (agent_correct, denom),
                    step: (step_exact, denom),
                });

                cases_by_cell.insert(cell_key(strategy, subset, condition), records);
                reports.push(report);
            }

            // pairwise chi-squared per cell
            for tally in &tallies {
                let report = reports
                    .iter_mut()
                    .find(|r| {
                        r.strategy == tally.strategy.id()
                            && r.subset == subset
                            && r.condition == condition
                    })
                    .expect("report exists for tallied strategy");
                for other in &tallies {
                    if other.strategy == tally.strategy {
                        continue;
                    }
                    report.pairwise_agent_p.insert(
                        other.strategy.id().to_string(),
                        chi_squared_p(tally.agent, other.agent, false),
                    );
                    report.pairwise_step_p.insert(
                        other.strategy.id().to_string(),
                        chi_squared_p(tally.step, other.step, false),
                    );
                }
            }
        }
    }

    let output = ExperimentOutput {
        reports,
        cases: cases_by_cell,
    };
    if let Some(dir) = run_dir {
        persist_run(dir, config, &output, backend)?;
    }
    Ok(output)
}

fn persist_run(
    dir: &Path,
    config: &ExperimentConfig,
    output: &ExperimentOutput,
    backend: &dyn CompletionBackend,
) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let manifest = json!({
        "config": config,
        "fixture_digests": backend.digest_log(),
    });
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    std::fs::write(
        dir.join("reports.json"),
        serde_json::to_string_pretty(&output.reports).expect("reports serialize"),
    )?;
    std::fs::write(dir.join("report.txt"), render_table(&output.reports))?;
    for (cell, records) in &output.cases {
        let cell_dir = dir.join("cases").join(cell);
        std::fs::create_dir_all(&cell_dir)?;
        for record in records {
            std::fs::write(
                cell_dir.join(format!("{}.json", record.outcome.case_id)),
                serde_json::to_string_pretty(record).expect("case record serializes"),
            )?;
        }
    }
    Ok(())
}

fn cell_label(report: &EvalReport) -> String {
    format!("{}/{}", report.subset, report.condition)
}

/// Plain-text table of the reports: one section per metric, strategies as
/// rows and (subset, condition) cells as columns.
pub fn render_table(reports: &[EvalReport]) -> String {
    if reports.is_empty() {
        return "no reports\n".to_string();
    }
    let mut cells: Vec<String> = Vec::new();
    let mut strategies: Vec<String> = Vec::new();
    for report in reports {
        let cell = cell_label(report);
        if !cells.contains(&cell) {
            cells.push(cell);
        }
        if !strategies.contains(&report.strategy) {
            strategies.push(report.strategy.clone());
        }
    }
    let find = |strategy: &str, cell: &str| {
        reports
            .iter()
            .find(|r| r.strategy == strategy && cell_label(r) == cell)
    };

    let width = strategies.iter().map(|s| s.len()).max().unwrap_or(8).max(8);
    let mut out = String::new();
    let mut section = |title: &str, value: &dyn Fn(&EvalReport) -> String| {
        out.push_str(title);
        out.push('\n');
        out.push_str(&format!("{:width$}", "method"));
        for cell in &cells {
            out.push_str(&format!(" | {cell:>24}"));
        }
        out.push('\n');
        for strategy in &strategies {
            out.push_str(&format!("{strategy:width$}"));
            for cell in &cells {
                match find(strategy, cell) {
                    Some(report) => out.push_str(&format!(" | {:>24}", value(report))),
                    None => out.push_str(&format!(" | {:>24}", "-")),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    };

    section("Agent-Level Accuracy", &|r| {
        format!("{:.3}", r.agent_accuracy)
    });
    section("Step-Level Accuracy (Exact)", &|r| {
        format!("{:.3}", r.step_accuracy_exact)
    });
    let tolerance_max = reports
        .iter()
        .map(|r| r.step_accuracy_at.len())
        .max()
        .unwrap_or(0);
    for k in 1..=tolerance_max {
        section(&format!("Step-Level Accuracy (±{k} steps)"), &move |r| {
            r.step_accuracy_at
                .get(k - 1)
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".to_string())
        });
    }
    section("Token Cost (total)", &|r| {
        r.total_tokens.total().to_string()
    });

    out.push_str("Pairwise agent-level p-values (chi-squared)\n");
    for report in reports {
        for (other, p) in &report.pairwise_agent_p {
            out.push_str(&format!(
                "{}: {} vs {}: p={:.6}\n",
                cell_label(report),
                report.strategy,
                other,
                p
            ));
        }
    }
    out
}
