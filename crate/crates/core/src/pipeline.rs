//! Full attribution flow: graduated contexts → analyst panel (unified or
//! decoupled passes) → weighted consensus → final attribution.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::baselines::{Attribution, UNKNOWN_AGENT};
use crate::consensus::{aggregate, ConsensusConfig, ConsensusResult};
use crate::context::{
    build_hierarchical_contexts_via_model, build_hierarchical_contexts_with, ContextType,
    PatternTable,
};
use crate::gateway::{CompletionBackend, MeteredBackend, TokenUsage};
use crate::panel::{
    builtin_profiles, case_seed, run_panel, sample_panel, AnalystRole, PanelError, PhaseSpec,
    RunOptions,
};
use crate::prompts::PromptLibrary;
use crate::trace::InteractionTrace;

/// Whether attribution runs as one pass or as agent-then-step passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    #[default]
    Unified,
    Decoupled,
}

impl PhaseMode {
    pub fn id(&self) -> &'static str {
        match self {
            PhaseMode::Unified => "unified",
            PhaseMode::Decoupled => "decoupled",
        }
    }

    pub fn parse(s: &str) -> Option<PhaseMode> {
        match s {
            "unified" => Some(PhaseMode::Unified),
            "decoupled" => Some(PhaseMode::Decoupled),
            _ => None,
        }
    }
}

impl fmt::Display for PhaseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// How compressed context layers are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    #[default]
    Pattern,
    Model,
}

impl ExtractionMode {
    pub fn id(&self) -> &'static str {
        match self {
            ExtractionMode::Pattern => "pattern",
            ExtractionMode::Model => "model",
        }
    }

    pub fn parse(s: &str) -> Option<ExtractionMode> {
        match s {
            "pattern" => Some(ExtractionMode::Pattern),
            "model" => Some(ExtractionMode::Model),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// k: analysts sampled per panel.
    pub panel_size: usize,
    /// δ: consensus confidence threshold.
    pub min_confidence_threshold: f64,
    pub phase_mode: PhaseMode,
    pub context_type: ContextType,
    pub with_ground_truth: bool,
    pub seed: u64,
    pub extraction: ExtractionMode,
    pub model_id: String,
    pub max_in_flight: usize,
    /// Draw a fresh panel for the step pass instead of reusing the agent
    /// pass's panel.
    pub resample_step_panel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            panel_size: 3,
            min_confidence_threshold: 0.3,
            phase_mode: PhaseMode::Unified,
            context_type: ContextType::General,
            with_ground_truth: true,
            seed: 0,
            extraction: ExtractionMode::Pattern,
            model_id: String::new(),
            max_in_flight: 3,
            resample_step_panel: false,
        }
    }
}

/// Pattern table plus prompt library; defaults are the shipped ones.
#[derive(Default)]
pub struct Toolkit {
    pub patterns: PatternTable,
    pub prompts: PromptLibrary,
}

/// Consensus output of a run, per phase layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ConsensusOutput {
    Unified {
        consensus: ConsensusResult,
    },
    Decoupled {
        agent_phase: ConsensusResult,
        step_phase: ConsensusResult,
    },
}

impl ConsensusOutput {
    /// The consensus that decided the agent attribution.
    pub fn agent_consensus(&self) -> &ConsensusResult {
        match self {
            ConsensusOutput::Unified { consensus } => consensus,
            ConsensusOutput::Decoupled { agent_phase, .. } => agent_phase,
        }
    }

    /// The consensus that decided the step attribution.
    pub fn step_consensus(&self) -> &ConsensusResult {
        match self {
            ConsensusOutput::Unified { consensus } => consensus,
            ConsensusOutput::Decoupled { step_phase, .. } => step_phase,
        }
    }
}

/// A sampled panel slot, kept for run provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMember {
    pub role: AnalystRole,
    pub temperature: f64,
}

/// Everything one attribution run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoOutcome {
    pub attribution: Attribution,
    pub consensus: ConsensusOutput,
    pub panel: Vec<PanelMember>,
    pub token_usage: TokenUsage,
    pub provider_calls: u64,
}

/// Reproducibility record for one run: config, panel, and the fixture
/// digests the backend touched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub panel: Vec<PanelMember>,
    pub fixture_digests: Vec<String>,
}

fn project_attribution(
    agent_source: &ConsensusResult,
    step_source: &ConsensusResult,
    usage: TokenUsage,
) -> Attribution {
    let agent = agent_source
        .conclusion
        .attribution
        .first()
        .cloned()
        .unwrap_or_else(|| UNKNOWN_AGENT.to_string());
    let step = step_source
        .conclusion
        .mistake_step
        .and_then(|s| usize::try_from(s).ok());
    let mut reason = agent_source.conclusion.reasoning.clone();
    if step.is_none() {
        reason.push_str(" [no step consensus: the winning votes named no valid step]");
    }
    Attribution {
        mistake_agent: agent,
        mistake_step: step,
        mistake_reason: reason,
        token_usage: usage,
    }
}

/// Run the whole attribution flow over one trace. Provider failures degrade
/// per analyst; the worst case is the empty-consensus sentinel, never an
/// abort. `case_id`, when given, is mixed into the panel seed so every case
/// draws its own panel.
pub fn run_echo(
    backend: &dyn CompletionBackend,
    trace: &InteractionTrace,
    config: &PipelineConfig,
    toolkit: &Toolkit,
    case_id: Option<&str>,
) -> Result<EchoOutcome, PanelError> {
    let meter = MeteredBackend::new(backend);
    let contexts = match config.extraction {
        ExtractionMode::Pattern => {
            build_hierarchical_contexts_with(trace, config.context_type, &toolkit.patterns)
        }
        ExtractionMode::Model => build_hierarchical_contexts_via_model(
            trace,
            config.context_type,
            &meter,
            &toolkit.patterns,
            &config.model_id,
        ),
    };

    let seed = match case_id {
        Some(id) => case_seed(config.seed, id),
        None => config.seed,
    };
    let pool = builtin_profiles();
    let panel = sample_panel(&pool, config.panel_size, seed)?;
    let panel_members: Vec<PanelMember> = panel
        .iter()
        .map(|p| PanelMember {
            role: p.role,
            temperature: p.temperature,
        })
        .collect();

    let consensus_config = ConsensusConfig {
        min_confidence_threshold: config.min_confidence_threshold,
    };
    let options = RunOptions {
        model_id: config.model_id.clone(),
        max_in_flight: config.max_in_flight,
    };

    let consensus = match config.phase_mode {
        PhaseMode::Unified => {
            let analyses = run_panel(
                &meter,
                trace,
                &contexts,
                &panel,
                &PhaseSpec::Unified,
                config.with_ground_truth,
                &toolkit.prompts,
                &options,
            );
            ConsensusOutput::Unified {
                consensus: aggregate(&analyses.results, &consensus_config, trace),
            }
        }
        PhaseMode::Decoupled => {
            let agent_analyses = run_panel(
                &meter,
                trace,
                &contexts,
                &panel,
                &PhaseSpec::Agent,
                config.with_ground_truth,
                &toolkit.prompts,
                &options,
            );
            let agent_phase = aggregate(&agent_analyses.results, &consensus_config, trace);

            let step_panel = if config.resample_step_panel {
                sample_panel(&pool, config.panel_size, seed.wrapping_add(1))?
            } else {
                panel.clone()
            };
            let step_analyses = run_panel(
                &meter,
                trace,
                &contexts,
                &step_panel,
                &PhaseSpec::Step {
                    attributed: agent_phase.conclusion.attribution.clone(),
                },
                config.with_ground_truth,
                &toolkit.prompts,
                &options,
            );
            let step_phase = aggregate(&step_analyses.results, &consensus_config, trace);
            ConsensusOutput::Decoupled {
                agent_phase,
                step_phase,
            }
        }
    };

    let attribution = project_attribution(
        consensus.agent_consensus(),
        consensus.step_consensus(),
        meter.usage(),
    );
    Ok(EchoOutcome {
        attribution,
        consensus,
        panel: panel_members,
        token_usage: meter.usage(),
        provider_calls: meter.calls(),
    })
}

/// Build the manifest for a finished run.
pub fn run_manifest(
    config: &PipelineConfig,
    outcome: &EchoOutcome,
    backend: &dyn CompletionBackend,
) -> RunManifest {
    RunManifest {
        config: config.clone(),
        panel: outcome.panel.clone(),
        fixture_digests: backend.digest_log(),
    }
}
