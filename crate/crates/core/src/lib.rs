//! Error attribution for multi-agent interaction traces.
//!
//! Given the log of a multi-agent run that produced a wrong final answer,
//! this crate identifies the responsible agent and the erroneous step. The
//! main pipeline builds a graduated per-step view of the whole trace, runs a
//! panel of role-specialized analysts over it, and aggregates their verdicts
//! through confidence-weighted consensus voting. Comparison strategies
//! (whole-log, sequential scan, bisection, advocate-plus-judge) and a
//! scoring harness round out the crate.

pub mod baselines;
pub mod consensus;
pub mod context;
pub mod eval;
pub mod gateway;
pub mod panel;
pub mod pipeline;
pub mod prompts;
pub mod trace;

pub use baselines::{Attribution, ProviderCtx, StepArgument, UNKNOWN_AGENT};
pub use consensus::{aggregate, ConsensusConfig, ConsensusResult, DisagreementAnalysis, Vote};
pub use context::{
    build_hierarchical_contexts, extract_fixed_window_contexts, format_hierarchical_context,
    ContextType, DetailLevel, FixedWindowContext, HierarchicalContext, PatternTable,
};
pub use eval::{
    chi_squared_p, random_baseline, run_experiment, score, CaseOutcome, Condition, EvalReport,
    ExperimentConfig, StrategyKind,
};
pub use gateway::{
    CompletionBackend, CompletionRequest, CompletionResponse, FixtureKeyConfig, FixtureStore,
    GatewayError, HttpBackend, LiveConfig, MeteredBackend, RecordBackend, ReplayBackend,
    ScriptedBackend, TokenUsage,
};
pub use panel::{
    builtin_profiles, parse_analysis_output, run_panel, sample_panel, AnalysisResult,
    AnalystProfile, AnalystRole, Conclusion, ConclusionKind, PhaseAnalyses, PhaseSpec,
};
pub use pipeline::{
    run_echo, EchoOutcome, ExtractionMode, PhaseMode, PipelineConfig, RunManifest, Toolkit,
};
pub use prompts::PromptLibrary;
pub use trace::{
    load_dataset, parse_trace, parse_trace_str, serialize_trace, validate_case, AgentStep,
    GoldAnnotation, IndexBase, InteractionTrace, LabeledCase, LoadReport, Subset, TraceError,
};
