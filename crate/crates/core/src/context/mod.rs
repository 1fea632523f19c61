//! Per-step graduated views of a whole trace: four detail levels banded by
//! positional distance, plus the fixed ±1 window used by the simplest
//! comparison pipeline.

mod extract;

pub use extract::{
    extract_key_decision, extract_with_model, obtain_milestones, summarize_agent, ContextType,
    DetailLevel, PatternError, PatternTable, KEY_DECISION_BUDGET, MILESTONE_BUDGET, NO_CONTENT,
    NO_MILESTONES, SUMMARY_BUDGET,
};

use serde::{Deserialize, Serialize};

use crate::gateway::CompletionBackend;
use crate::trace::{AgentStep, InteractionTrace};

/// One compressed view of a non-target step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    /// Source step ordinal.
    pub index: usize,
    pub name: String,
    pub role: String,
    /// |source index − target index|.
    pub distance: usize,
    pub detail_level: DetailLevel,
    /// Extracted text; never empty (blank sources get the layer fallback).
    pub content: String,
}

/// Everything an analyst sees about the trace relative to one target step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchicalContext {
    pub target: AgentStep,
    /// Distance 1, full content.
    pub immediate: Vec<ContextEntry>,
    /// Distance 2-3, key decisions.
    pub nearby: Vec<ContextEntry>,
    /// Distance 4-6, brief summaries.
    pub distant: Vec<ContextEntry>,
    /// Distance >6, milestones.
    pub milestones: Vec<ContextEntry>,
}

impl HierarchicalContext {
    /// All entries in level order (immediate, nearby, distant, milestones).
    pub fn levels(&self) -> [(&'static str, &[ContextEntry]); 4] {
        [
            ("immediate", self.immediate.as_slice()),
            ("nearby", self.nearby.as_slice()),
            ("distant", self.distant.as_slice()),
            ("milestones", self.milestones.as_slice()),
        ]
    }
}

/// The ±1 window around one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedWindowContext {
    pub prev: Option<AgentStep>,
    pub current: AgentStep,
    pub next: Option<AgentStep>,
}

/// Detail level dictated by a step's distance from the target.
pub fn level_for_distance(distance: usize) -> DetailLevel {
    match distance {
        0 => unreachable!("target step carries no context entry"),
        1 => DetailLevel::Full,
        2..=3 => DetailLevel::KeyDecisions,
        4..=6 => DetailLevel::Summary,
        _ => DetailLevel::Milestones,
    }
}

fn build_with<F>(trace: &InteractionTrace, mut extract: F) -> Vec<HierarchicalContext>
where
    F: FnMut(DetailLevel, &str) -> String,
{
    let n = trace.len();
    let mut contexts = Vec::with_capacity(n);
    for target_idx in 0..n {
        let mut ctx = HierarchicalContext {
            target: trace.steps[target_idx].clone(),
            immediate: Vec::new(),
            nearby: Vec::new(),
            distant: Vec::new(),
            milestones: Vec::new(),
        };
        // Iterating in step order keeps every level sorted by source index.
        for (i, step) in trace.steps.iter().enumerate() {
            if i == target_idx {
                continue;
            }
            let distance = target_idx.abs_diff(i);
            let level = level_for_distance(distance);
            let mut content = match level {
                DetailLevel::Full => step.content.clone(),
                other => extract(other, &step.content),
            };
            if content.is_empty() {
                content = level.blank_fallback().to_string();
            }
            let entry = ContextEntry {
                index: i,
                name: step.name.clone(),
                role: step.role.clone(),
                distance,
                detail_level: level,
                content,
            };
            match level {
                DetailLevel::Full => ctx.immediate.push(entry),
                DetailLevel::KeyDecisions => ctx.nearby.push(entry),
                DetailLevel::Summary => ctx.distant.push(entry),
                DetailLevel::Milestones => ctx.milestones.push(entry),
            }
        }
        contexts.push(ctx);
    }
    contexts
}

/// Build one hierarchical context per step using the built-in pattern table.
pub fn build_hierarchical_contexts(
    trace: &InteractionTrace,
    context_type: ContextType,
) -> Vec<HierarchicalContext> {
    build_hierarchical_contexts_with(trace, context_type, PatternTable::builtin())
}

/// Build contexts with a caller-supplied pattern table.
pub fn build_hierarchical_contexts_with(
    trace: &InteractionTrace,
    context_type: ContextType,
    table: &PatternTable,
) -> Vec<HierarchicalContext> {
    build_with(trace, |level, content| {
        table.extract_for_layer(level, content, context_type)
    })
}

/// Build contexts with provider-backed extraction for the compressed layers.
/// Provider failures degrade to the pattern table; never aborts.
pub fn build_hierarchical_contexts_via_model(
    trace: &InteractionTrace,
    context_type: ContextType,
    backend: &dyn CompletionBackend,
    table: &PatternTable,
    model_id: &str,
) -> Vec<HierarchicalContext> {
    build_with(trace, |level, content| {
        extract_with_model(backend, content, level, context_type, table, model_id)
    })
}

/// Each step with its immediate neighbors (absent at trace boundaries).
pub fn extract_fixed_window_contexts(trace: &InteractionTrace) -> Vec<FixedWindowContext> {
    let n = trace.len();
    (0..n)
        .map(|i| FixedWindowContext {
            prev: (i > 0).then(|| trace.steps[i - 1].clone()),
            current: trace.steps[i].clone(),
            next: (i + 1 < n).then(|| trace.steps[i + 1].clone()),
        })
        .collect()
}

/// Deterministic prompt rendering of one hierarchical context. Empty levels
/// are omitted; identical inputs render identical text.
pub fn format_hierarchical_context(ctx: &HierarchicalContext) -> String {
    let mut lines = Vec::new();
    lines.push(format!(
        "=== TARGET: Step {} - {} ({}) ===",
        ctx.target.index, ctx.target.name, ctx.target.role
    ));
    lines.push(ctx.target.content.clone());

    let sections = [
        ("Immediate context (full detail)", &ctx.immediate),
        ("Nearby context (key decisions)", &ctx.nearby),
        ("Distant context (summaries)", &ctx.distant),
        ("Milestone context", &ctx.milestones),
    ];
    for (label, entries) in sections {
        if entries.is_empty() {
            continue;
        }
        lines.push(String::new());
        lines.push(format!("--- {label} ---"));
        for entry in entries.iter() {
            lines.push(format!(
                "[Step {}] {} ({}): {}",
                entry.index, entry.name, entry.role, entry.content
            ));
        }
    }
    lines.join("\n")
}
