//! Command-line surface: attribute a single trace, run dataset experiments,
//! and manage record/replay fixture stores.
//!
//! Exit codes are a stable contract: 0 success, 2 input error, 3 provider
//! exhaustion, 4 fixture miss.

mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use echo_core::eval::{render_table, run_experiment, Condition, ExperimentConfig, StrategyKind};
use echo_core::gateway::{
    CompletionBackend, CompletionRequest, CompletionResponse, FixtureKeyConfig, FixtureStore,
    GatewayError, HttpBackend, LiveConfig, RecordBackend, ReplayBackend, ScriptedBackend,
};
use echo_core::pipeline::{run_echo, run_manifest, ConsensusOutput, PipelineConfig, Toolkit};
use echo_core::prompts::PromptLibrary;
use echo_core::trace::{load_dataset, parse_trace, LabeledCase, Subset, TraceError};
use echo_core::PatternTable;

use config::{
    render_explain, resolve, FileConfig, FlagValues, OutputFormat, ProviderKind, Resolved, Source,
};

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Provider(String),
    FixtureMiss(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Provider(_) => 3,
            CliError::FixtureMiss(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Provider(m) => write!(f, "provider failure: {m}"),
            CliError::FixtureMiss(m) => write!(f, "fixture miss: {m}"),
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::FixtureMiss { digest } => CliError::FixtureMiss(digest),
            GatewayError::Config(m) => CliError::Input(m),
            other => CliError::Provider(other.to_string()),
        }
    }
}

impl From<echo_core::eval::EvalError> for CliError {
    fn from(e: echo_core::eval::EvalError) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "echo-attr",
    version,
    about = "Attribute failures in multi-agent interaction traces"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML config file (flags > env > file > defaults)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Completion provider backing the run
    #[arg(long, global = true, value_parser = ["live", "replay", "mock"])]
    provider: Option<String>,
    /// Fixture store directory (replay provider, record/replay commands)
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Chat-completions endpoint URL for the live provider
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Model identifier passed to the provider
    #[arg(long, global = true)]
    model: Option<String>,
    /// Payload shape of the live endpoint
    #[arg(long, global = true, value_parser = ["openai_chat", "anthropic_messages"])]
    wire: Option<String>,
    /// Run seed (panel sampling mixes in each case id)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Analysts per panel (1-6)
    #[arg(long, global = true)]
    panel_size: Option<usize>,
    /// Minimum confidence for a verdict to vote
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// unified: one panel pass; decoupled: agent pass then step pass
    #[arg(long, global = true, value_parser = ["unified", "decoupled"])]
    phase: Option<String>,
    /// Extraction focus: handoff, decision_quality, error_propagation, general
    #[arg(long, global = true)]
    context_type: Option<String>,
    /// Context compression: pattern (regex tables) or model (provider-backed)
    #[arg(long, global = true, value_parser = ["pattern", "model"])]
    extraction: Option<String>,
    /// Reveal the correct answer to the analysts
    #[arg(long, global = true, overrides_with = "without_gt")]
    with_gt: bool,
    /// Withhold the correct answer from the analysts
    #[arg(long, global = true, overrides_with = "with_gt")]
    without_gt: bool,
    /// Bound on concurrent provider calls
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    /// Largest step tolerance k reported as step@k
    #[arg(long, global = true)]
    tolerance_max: Option<usize>,
    /// Step numbering convention of annotation files (0 or 1)
    #[arg(long, global = true)]
    index_base: Option<u8>,
    /// Output format
    #[arg(long, global = true, value_parser = ["text", "json"])]
    format: Option<String>,
    /// Print every effective config value with its source and exit
    #[arg(long, global = true)]
    explain: bool,
    /// Drop failed cases from accuracy denominators
    #[arg(long, global = true)]
    exclude_failed: bool,
    /// Draw a fresh panel for the decoupled step pass
    #[arg(long, global = true)]
    resample_step_panel: bool,
    /// Directory of prompt template overrides
    #[arg(long, global = true)]
    templates_dir: Option<PathBuf>,
    /// Replacement extraction pattern table (TOML)
    #[arg(long, global = true)]
    patterns_file: Option<PathBuf>,
}

impl CommonArgs {
    fn flag_values(&self) -> FlagValues {
        FlagValues {
            provider: self.provider.clone(),
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            wire: self.wire.clone(),
            store: self.store.clone(),
            seed: self.seed,
            panel_size: self.panel_size,
            threshold: self.threshold,
            phase: self.phase.clone(),
            context_type: self.context_type.clone(),
            extraction: self.extraction.clone(),
            with_gt: match (self.with_gt, self.without_gt) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            },
            max_in_flight: self.max_in_flight,
            tolerance_max: self.tolerance_max,
            index_base: self.index_base,
            strategies: None,
            format: self.format.clone(),
            exclude_failed: self.exclude_failed.then_some(true),
            resample_step_panel: self.resample_step_panel.then_some(true),
            templates_dir: self.templates_dir.clone(),
            patterns_file: self.patterns_file.clone(),
        }
    }
}

#[derive(Args, Clone)]
struct AttributeArgs {
    /// Trace or case file (JSON)
    trace: PathBuf,
}

#[derive(Args, Clone)]
struct EvaluateArgs {
    /// Dataset root containing manifest.json
    dataset: PathBuf,
    /// Comma-separated strategies to run
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
    /// Subset filter: hand_crafted or algorithm_generated (default: both)
    #[arg(long)]
    subset: Option<String>,
    /// Run directory (default: runs/<timestamp>-<seed>)
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand, Clone)]
enum RunCommand {
    /// Attribute a single trace
    Attribute(AttributeArgs),
    /// Run strategies over a dataset and score them
    Evaluate(EvaluateArgs),
}

#[derive(Args, Clone)]
struct RecordArgs {
    /// List digests in the store instead of running a command
    #[arg(long)]
    list: bool,
    #[command(subcommand)]
    run: Option<RunCommand>,
}

#[derive(Args, Clone)]
struct ReplayArgs {
    #[command(subcommand)]
    run: RunCommand,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Attribute a single trace file
    Attribute(AttributeArgs),
    /// Run strategies over a dataset and print a score table
    Evaluate(EvaluateArgs),
    /// Record provider responses into a fixture store while running a command
    Record(RecordArgs),
    /// Replay a command entirely from a fixture store
    Replay(ReplayArgs),
}

/// Wrapper that remembers the most severe provider error seen during a run,
/// so degraded-but-complete runs still map to the right exit code.
struct FailureTracking<'a> {
    inner: &'a dyn CompletionBackend,
    fixture_miss: Mutex<Option<String>>,
    provider_error: Mutex<Option<String>>,
}

impl<'a> FailureTracking<'a> {
    fn new(inner: &'a dyn CompletionBackend) -> Self {
        Self {
            inner,
            fixture_miss: Mutex::new(None),
            provider_error: Mutex::new(None),
        }
    }

    fn check_fixture_miss(&self) -> Result<(), CliError> {
        match self.fixture_miss.lock().unwrap().clone() {
            Some(digest) => Err(CliError::FixtureMiss(digest)),
            None => Ok(()),
        }
    }

    fn provider_error(&self) -> Option<String> {
        self.provider_error.lock().unwrap().clone()
    }
}

impl CompletionBackend for FailureTracking<'_> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let result = self.inner.complete(request);
        if let Err(e) = &result {
            match e {
                GatewayError::FixtureMiss { digest } => {
                    self.fixture_miss
                        .lock()
                        .unwrap()
                        .get_or_insert_with(|| digest.clone());
                }
                other if other.is_provider_exhaustion() => {
                    self.provider_error
                        .lock()
                        .unwrap()
                        .get_or_insert_with(|| other.to_string());
                }
                _ => {}
            }
        }
        result
    }

    fn digest_log(&self) -> Vec<String> {
        self.inner.digest_log()
    }
}

enum Backend {
    Scripted(ScriptedBackend),
    Replay(ReplayBackend),
    Http(HttpBackend),
}

impl Backend {
    fn as_dyn(&self) -> &dyn CompletionBackend {
        match self {
            Backend::Scripted(b) => b,
            Backend::Replay(b) => b,
            Backend::Http(b) => b,
        }
    }
}

fn base_backend(resolved: &Resolved) -> Result<Backend, CliError> {
    match resolved.provider {
        ProviderKind::Mock => Ok(Backend::Scripted(ScriptedBackend::canned())),
        ProviderKind::Replay => {
            let store = resolved.store.clone().ok_or_else(|| {
                CliError::Input("replay provider needs --store <dir>".to_string())
            })?;
            Ok(Backend::Replay(ReplayBackend::new(
                FixtureStore::new(store),
                FixtureKeyConfig::default(),
            )))
        }
        ProviderKind::Live => {
            let endpoint = resolved.endpoint.clone().ok_or_else(|| {
                CliError::Input(format!(
                    "live provider needs an endpoint (--endpoint or {})",
                    echo_core::gateway::ENDPOINT_ENV
                ))
            })?;
            let mut live = LiveConfig::new(endpoint);
            live.api_key = std::env::var(echo_core::gateway::API_KEY_ENV)
                .ok()
                .filter(|k| !k.is_empty());
            live.wire = resolved.wire;
            Ok(Backend::Http(HttpBackend::new(live)?))
        }
    }
}

fn toolkit_for(resolved: &Resolved) -> Result<Toolkit, CliError> {
    let prompts = match &resolved.templates_dir {
        Some(dir) => PromptLibrary::with_overrides_from(dir).map_err(|e| {
            CliError::Input(format!("cannot load templates from {}: {e}", dir.display()))
        })?,
        None => PromptLibrary::builtin(),
    };
    let patterns = match &resolved.patterns_file {
        Some(path) => PatternTable::from_path(path).map_err(|e| CliError::Input(e.to_string()))?,
        None => PatternTable::default(),
    };
    Ok(Toolkit { patterns, prompts })
}

fn pipeline_config(resolved: &Resolved) -> PipelineConfig {
    PipelineConfig {
        panel_size: resolved.panel_size,
        min_confidence_threshold: resolved.threshold,
        phase_mode: resolved.phase,
        context_type: resolved.context_type,
        with_ground_truth: resolved.with_gt,
        seed: resolved.seed,
        extraction: resolved.extraction,
        model_id: resolved.model.clone(),
        max_in_flight: resolved.max_in_flight,
        resample_step_panel: resolved.resample_step_panel,
    }
}

fn cmd_attribute(
    args: &AttributeArgs,
    resolved: &Resolved,
    backend: &dyn CompletionBackend,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.trace)
        .map_err(|e| CliError::Input(format!("cannot read trace {}: {e}", args.trace.display())))?;
    let document: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("invalid JSON in {}: {e}", args.trace.display())))?;
    let trace = parse_trace(&document)?;

    let tracking = FailureTracking::new(backend);
    let toolkit = toolkit_for(resolved)?;
    let config = pipeline_config(resolved);
    let case_id = args
        .trace
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned());

    let outcome = run_echo(&tracking, &trace, &config, &toolkit, case_id.as_deref())
        .map_err(|e| CliError::Input(e.to_string()))?;
    tracking.check_fixture_miss()?;
    if outcome.attribution.is_unknown() {
        if let Some(error) = tracking.provider_error() {
            return Err(CliError::Provider(error));
        }
    }

    match resolved.format {
        OutputFormat::Json => {
            let manifest = run_manifest(&config, &outcome, &tracking);
            let doc = json!({
                "attribution": outcome.attribution,
                "consensus": outcome.consensus,
                "panel": outcome.panel,
                "token_usage": outcome.token_usage,
                "provider_calls": outcome.provider_calls,
                "manifest": manifest,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&doc).expect("serializes")
            );
        }
        OutputFormat::Text => {
            let a = &outcome.attribution;
            println!("Attribution");
            println!("  agent:  {}", a.mistake_agent);
            match a.mistake_step {
                Some(step) => println!("  step:   {step}"),
                None => println!("  step:   unresolved"),
            }
            println!("  reason: {}", a.mistake_reason);
            let (label, agent_side, step_side) = match &outcome.consensus {
                ConsensusOutput::Unified { consensus } => ("unified", consensus, consensus),
                ConsensusOutput::Decoupled {
                    agent_phase,
                    step_phase,
                } => ("decoupled", agent_phase, step_phase),
            };
            println!("Consensus ({label})");
            println!("  kind:             {}", agent_side.conclusion.kind);
            println!(
                "  confidence:       {:.3}",
                agent_side.conclusion.confidence
            );
            println!(
                "  requires_review:  {}",
                agent_side
                    .voting_details
                    .disagreement_analysis
                    .requires_review
                    || step_side
                        .voting_details
                        .disagreement_analysis
                        .requires_review
            );
            let votes: Vec<String> = agent_side
                .voting_details
                .conclusion_votes
                .iter()
                .map(|(kind, votes)| format!("{kind}={}", votes.len()))
                .collect();
            println!(
                "  votes:            {}",
                if votes.is_empty() {
                    "none".to_string()
                } else {
                    votes.join(" ")
                }
            );
            let panel: Vec<String> = outcome
                .panel
                .iter()
                .map(|m| format!("{}@{:.2}", m.role, m.temperature))
                .collect();
            println!("Panel: {}", panel.join(", "));
            println!(
                "Tokens: input={} output={} ({} provider calls)",
                outcome.token_usage.input_tokens,
                outcome.token_usage.output_tokens,
                outcome.provider_calls
            );
        }
    }
    Ok(())
}

fn parse_subset_filter(raw: &Option<String>) -> Result<Vec<Subset>, CliError> {
    match raw {
        None => Ok(vec![Subset::HandCrafted, Subset::AlgorithmGenerated]),
        Some(s) => Subset::parse(s)
            .map(|subset| vec![subset])
            .ok_or_else(|| CliError::Input(format!("unknown subset `{s}`"))),
    }
}

fn cmd_evaluate(
    args: &EvaluateArgs,
    resolved: &Resolved,
    backend: &dyn CompletionBackend,
) -> Result<(), CliError> {
    let subsets = parse_subset_filter(&args.subset)?;
    let mut datasets: BTreeMap<Subset, Vec<LabeledCase>> = BTreeMap::new();
    for &subset in &subsets {
        let (cases, report) = load_dataset(&args.dataset, subset, resolved.index_base)?;
        for rejection in &report.rejected {
            eprintln!(
                "skipped {} ({}): {}",
                rejection.path, subset, rejection.reason
            );
        }
        datasets.insert(subset, cases);
    }
    if datasets.values().all(Vec::is_empty) {
        return Err(CliError::Input(format!(
            "no cases found under {}",
            args.dataset.display()
        )));
    }

    let strategies = if args.strategies.is_empty() {
        resolved.strategies.clone()
    } else {
        args.strategies
            .iter()
            .map(|s| {
                StrategyKind::parse(s.trim())
                    .ok_or_else(|| CliError::Input(format!("unknown strategy `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?
    };

    let experiment = ExperimentConfig {
        strategies,
        conditions: vec![if resolved.with_gt {
            Condition::WithGt
        } else {
            Condition::WithoutGt
        }],
        subsets,
        tolerance_max: resolved.tolerance_max,
        pipeline: pipeline_config(resolved),
        exclude_failed: resolved.exclude_failed,
    };

    let run_dir = args.run_dir.clone().unwrap_or_else(|| {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        PathBuf::from("runs").join(format!("{stamp}-{}", resolved.seed))
    });

    let tracking = FailureTracking::new(backend);
    let toolkit = toolkit_for(resolved)?;
    let output = run_experiment(&experiment, &datasets, &tracking, &toolkit, Some(&run_dir))?;
    tracking.check_fixture_miss()?;

    match resolved.format {
        OutputFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&output.reports).expect("serializes")
        ),
        OutputFormat::Text => {
            print!("{}", render_table(&output.reports));
            println!("run directory: {}", run_dir.display());
        }
    }
    Ok(())
}

fn dispatch(
    run: &RunCommand,
    resolved: &Resolved,
    backend: &dyn CompletionBackend,
) -> Result<(), CliError> {
    match run {
        RunCommand::Attribute(args) => cmd_attribute(args, resolved, backend),
        RunCommand::Evaluate(args) => cmd_evaluate(args, resolved, backend),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let resolved = resolve(file, cli.common.flag_values())?;

    if cli.common.explain {
        print!("{}", render_explain(&resolved));
        return Ok(());
    }

    match &cli.command {
        Command::Attribute(args) => {
            let backend = base_backend(&resolved)?;
            cmd_attribute(args, &resolved, backend.as_dyn())
        }
        Command::Evaluate(args) => {
            let backend = base_backend(&resolved)?;
            cmd_evaluate(args, &resolved, backend.as_dyn())
        }
        Command::Record(args) => {
            let store_dir = resolved
                .store
                .clone()
                .ok_or_else(|| CliError::Input("record needs --store <dir>".to_string()))?;
            let store = FixtureStore::new(store_dir);
            if args.list {
                for digest in store.list().map_err(CliError::from)? {
                    println!("{digest}");
                }
                return Ok(());
            }
            let Some(inner_run) = &args.run else {
                return Err(CliError::Input(
                    "record needs a command to run (or --list)".to_string(),
                ));
            };
            // Recording captures the live provider unless one was chosen
            // explicitly; `--provider mock` supports offline fixture builds.
            let mut effective = resolved.clone();
            let provider_explicit = effective
                .provenance
                .iter()
                .any(|(key, _, source)| key == "provider" && *source != Source::Default);
            if !provider_explicit {
                effective.provider = ProviderKind::Live;
            }
            let inner = base_backend(&effective)?;
            let recorder = RecordBackend::new(inner.as_dyn(), store, FixtureKeyConfig::default());
            dispatch(inner_run, &effective, &recorder)
        }
        Command::Replay(args) => {
            let store_dir = resolved
                .store
                .clone()
                .ok_or_else(|| CliError::Input("replay needs --store <dir>".to_string()))?;
            let replay =
                ReplayBackend::new(FixtureStore::new(store_dir), FixtureKeyConfig::default());
            dispatch(&args.run, &resolved, &replay)
        }
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
