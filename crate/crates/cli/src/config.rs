//! Layered configuration: defaults, then the config file, then environment
//! variables, then flags. Every effective value remembers its source so
//! `--explain` can print the full provenance.

use std::fmt;
use std::path::PathBuf;

use serde::Deserialize;

use echo_core::context::ContextType;
use echo_core::eval::StrategyKind;
use echo_core::gateway::{WireStyle, API_KEY_ENV, ENDPOINT_ENV, MODEL_ENV, WIRE_ENV};
use echo_core::pipeline::{ExtractionMode, PhaseMode};
use echo_core::trace::IndexBase;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Live,
    Replay,
    Mock,
}

impl ProviderKind {
    fn parse(s: &str) -> Option<ProviderKind> {
        match s {
            "live" => Some(ProviderKind::Live),
            "replay" => Some(ProviderKind::Replay),
            "mock" => Some(ProviderKind::Mock),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Flag => "flag",
        })
    }
}

/// Optional values read from the TOML config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub provider: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub wire: Option<String>,
    pub store: Option<PathBuf>,
    pub seed: Option<u64>,
    pub panel_size: Option<usize>,
    pub threshold: Option<f64>,
    pub phase: Option<String>,
    pub context_type: Option<String>,
    pub extraction: Option<String>,
    pub with_gt: Option<bool>,
    pub max_in_flight: Option<usize>,
    pub tolerance_max: Option<usize>,
    pub index_base: Option<u8>,
    pub strategies: Option<Vec<String>>,
    pub format: Option<String>,
    pub exclude_failed: Option<bool>,
    pub resample_step_panel: Option<bool>,
    pub templates_dir: Option<PathBuf>,
    pub patterns_file: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))
    }
}

/// The merged view actually used by commands.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub provider: ProviderKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub wire: WireStyle,
    pub store: Option<PathBuf>,
    pub seed: u64,
    pub panel_size: usize,
    pub threshold: f64,
    pub phase: PhaseMode,
    pub context_type: ContextType,
    pub extraction: ExtractionMode,
    pub with_gt: bool,
    pub max_in_flight: usize,
    pub tolerance_max: usize,
    pub index_base: IndexBase,
    pub strategies: Vec<StrategyKind>,
    pub format: OutputFormat,
    pub exclude_failed: bool,
    pub resample_step_panel: bool,
    pub templates_dir: Option<PathBuf>,
    pub patterns_file: Option<PathBuf>,
    /// (key, effective value, source) for --explain.
    pub provenance: Vec<(String, String, Source)>,
}

struct Merger {
    provenance: Vec<(String, String, Source)>,
}

impl Merger {
    fn pick<T: Clone>(
        &mut self,
        key: &str,
        render: impl Fn(&T) -> String,
        default: T,
        file: Option<T>,
        env: Option<T>,
        flag: Option<T>,
    ) -> T {
        let (value, source) = if let Some(v) = flag {
            (v, Source::Flag)
        } else if let Some(v) = env {
            (v, Source::Env)
        } else if let Some(v) = file {
            (v, Source::File)
        } else {
            (default, Source::Default)
        };
        self.provenance
            .push((key.to_string(), render(&value), source));
        value
    }
}

fn parse_with<T>(
    key: &str,
    raw: Option<String>,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Option<T>, CliError> {
    match raw {
        None => Ok(None),
        Some(s) => parse(&s)
            .map(Some)
            .ok_or_else(|| CliError::Input(format!("invalid value `{s}` for {key}"))),
    }
}

/// Flag-level values as collected by clap (everything optional).
#[derive(Debug, Default, Clone)]
pub struct FlagValues {
    pub provider: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub wire: Option<String>,
    pub store: Option<PathBuf>,
    pub seed: Option<u64>,
    pub panel_size: Option<usize>,
    pub threshold: Option<f64>,
    pub phase: Option<String>,
    pub context_type: Option<String>,
    pub extraction: Option<String>,
    pub with_gt: Option<bool>,
    pub max_in_flight: Option<usize>,
    pub tolerance_max: Option<usize>,
    pub index_base: Option<u8>,
    pub strategies: Option<Vec<String>>,
    pub format: Option<String>,
    pub exclude_failed: Option<bool>,
    pub resample_step_panel: Option<bool>,
    pub templates_dir: Option<PathBuf>,
    pub patterns_file: Option<PathBuf>,
}

fn index_base_from(raw: u8) -> Option<IndexBase> {
    match raw {
        0 => Some(IndexBase::Zero),
        1 => Some(IndexBase::One),
        _ => None,
    }
}

pub fn resolve(file: FileConfig, flags: FlagValues) -> Result<Resolved, CliError> {
    let mut merger = Merger {
        provenance: Vec::new(),
    };
    let env_var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());

    let provider_raw = merger.pick(
        "provider",
        |v: &String| v.clone(),
        "mock".to_string(),
        file.provider,
        None,
        flags.provider,
    );
    let provider = ProviderKind::parse(&provider_raw)
        .ok_or_else(|| CliError::Input(format!("invalid provider `{provider_raw}`")))?;

    let endpoint = merger.pick(
        "endpoint",
        |v: &Option<String>| v.clone().unwrap_or_else(|| "<unset>".to_string()),
        None,
        file.endpoint.map(Some),
        env_var(ENDPOINT_ENV).map(Some),
        flags.endpoint.map(Some),
    );
    let model = merger.pick(
        "model",
        |v: &String| v.clone(),
        String::new(),
        file.model,
        env_var(MODEL_ENV),
        flags.model,
    );
    let wire = merger.pick(
        "wire",
        |v: &WireStyle| v.id().to_string(),
        WireStyle::OpenAiChat,
        parse_with("wire", file.wire, WireStyle::parse)?,
        parse_with(WIRE_ENV, env_var(WIRE_ENV), WireStyle::parse)?,
        parse_with("--wire", flags.wire, WireStyle::parse)?,
    );
    let api_key_set = env_var(API_KEY_ENV).is_some();
    merger.provenance.push((
        "api_key".to_string(),
        if api_key_set { "<set>" } else { "<unset>" }.to_string(),
        if api_key_set {
            Source::Env
        } else {
            Source::Default
        },
    ));

    let store = merger.pick(
        "store",
        |v: &Option<PathBuf>| {
            v.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<unset>".to_string())
        },
        None,
        file.store.map(Some),
        None,
        flags.store.map(Some),
    );

    let seed = merger.pick("seed", u64::to_string, 0, file.seed, None, flags.seed);
    let panel_size = merger.pick(
        "panel_size",
        usize::to_string,
        3,
        file.panel_size,
        None,
        flags.panel_size,
    );
    let threshold = merger.pick(
        "threshold",
        f64::to_string,
        0.3,
        file.threshold,
        None,
        flags.threshold,
    );
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Input(format!(
            "threshold {threshold} is outside [0, 1]"
        )));
    }

    let phase = merger.pick(
        "phase",
        |v: &PhaseMode| v.id().to_string(),
        PhaseMode::Unified,
        parse_with("phase", file.phase, PhaseMode::parse)?,
        None,
        parse_with("--phase", flags.phase, PhaseMode::parse)?,
    );
    let context_type = merger.pick(
        "context_type",
        |v: &ContextType| v.id().to_string(),
        ContextType::General,
        parse_with("context_type", file.context_type, ContextType::parse)?,
        None,
        parse_with("--context-type", flags.context_type, ContextType::parse)?,
    );
    let extraction = merger.pick(
        "extraction",
        |v: &ExtractionMode| v.id().to_string(),
        ExtractionMode::Pattern,
        parse_with("extraction", file.extraction, ExtractionMode::parse)?,
        None,
        parse_with("--extraction", flags.extraction, ExtractionMode::parse)?,
    );
    let with_gt = merger.pick(
        "with_gt",
        bool::to_string,
        true,
        file.with_gt,
        None,
        flags.with_gt,
    );
    let max_in_flight = merger.pick(
        "max_in_flight",
        usize::to_string,
        3,
        file.max_in_flight,
        None,
        flags.max_in_flight,
    );
    let tolerance_max = merger.pick(
        "tolerance_max",
        usize::to_string,
        5,
        file.tolerance_max,
        None,
        flags.tolerance_max,
    );
    let index_base = merger.pick(
        "index_base",
        |v: &IndexBase| match v {
            IndexBase::Zero => "0".to_string(),
            IndexBase::One => "1".to_string(),
        },
        IndexBase::Zero,
        parse_with("index_base", file.index_base.map(|v| v.to_string()), |s| {
            s.parse().ok().and_then(index_base_from)
        })?,
        None,
        parse_with(
            "--index-base",
            flags.index_base.map(|v| v.to_string()),
            |s| s.parse().ok().and_then(index_base_from),
        )?,
    );

    let parse_strategies =
        |raw: Option<Vec<String>>| -> Result<Option<Vec<StrategyKind>>, CliError> {
            match raw {
                None => Ok(None),
                Some(items) => items
                    .iter()
                    .map(|s| {
                        StrategyKind::parse(s.trim())
                            .ok_or_else(|| CliError::Input(format!("unknown strategy `{s}`")))
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map(Some),
            }
        };
    let strategies = merger.pick(
        "strategies",
        |v: &Vec<StrategyKind>| v.iter().map(StrategyKind::id).collect::<Vec<_>>().join(","),
        vec![StrategyKind::Echo],
        parse_strategies(file.strategies)?,
        None,
        parse_strategies(flags.strategies)?,
    );

    let format_raw = merger.pick(
        "format",
        |v: &String| v.clone(),
        "text".to_string(),
        file.format,
        None,
        flags.format,
    );
    let format = match format_raw.as_str() {
        "text" => OutputFormat::Text,
        "json" => OutputFormat::Json,
        other => return Err(CliError::Input(format!("invalid format `{other}`"))),
    };

    let exclude_failed = merger.pick(
        "exclude_failed",
        bool::to_string,
        false,
        file.exclude_failed,
        None,
        flags.exclude_failed,
    );
    let resample_step_panel = merger.pick(
        "resample_step_panel",
        bool::to_string,
        false,
        file.resample_step_panel,
        None,
        flags.resample_step_panel,
    );
    let templates_dir = merger.pick(
        "templates_dir",
        |v: &Option<PathBuf>| {
            v.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<builtin>".to_string())
        },
        None,
        file.templates_dir.map(Some),
        None,
        flags.templates_dir.map(Some),
    );
    let patterns_file = merger.pick(
        "patterns_file",
        |v: &Option<PathBuf>| {
            v.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<builtin>".to_string())
        },
        None,
        file.patterns_file.map(Some),
        None,
        flags.patterns_file.map(Some),
    );

    Ok(Resolved {
        provider,
        endpoint,
        model,
        wire,
        store,
        seed,
        panel_size,
        threshold,
        phase,
        context_type,
        extraction,
        with_gt,
        max_in_flight,
        tolerance_max,
        index_base,
        strategies,
        format,
        exclude_failed,
        resample_step_panel,
        templates_dir,
        patterns_file,
        provenance: merger.provenance,
    })
}

pub fn render_explain(resolved: &Resolved) -> String {
    let mut out = String::from("effective configuration (value <- source)\n");
    let width = resolved
        .provenance
        .iter()
        .map(|(k, _, _)| k.len())
        .max()
        .unwrap_or(0);
    for (key, value, source) in &resolved.provenance {
        out.push_str(&format!("  {key:width$} = {value}  <- {source}\n"));
    }
    out
}
