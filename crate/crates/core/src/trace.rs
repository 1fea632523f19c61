//! Canonical in-memory model of a multi-agent failure log, plus the JSON
//! adapter and dataset loader for annotated benchmark cases.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
}

impl TraceError {
    fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

/// One utterance in an interaction trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStep {
    /// Position in the owning trace (0-based, equal to the list index).
    pub index: usize,
    pub name: String,
    pub role: String,
    /// Full utterance text. May be empty.
    pub content: String,
}

/// An ordered multi-agent interaction that ended in a wrong final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionTrace {
    pub steps: Vec<AgentStep>,
    /// Original task text. May be empty.
    pub query: String,
    /// The system's final (incorrect) answer.
    pub final_answer: String,
    /// The correct answer, when known.
    pub ground_truth: Option<String>,
}

impl InteractionTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, index: usize) -> Option<&AgentStep> {
        self.steps.get(index)
    }

    /// Distinct agent names in first-appearance order.
    pub fn agent_names(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut names = Vec::new();
        for step in &self.steps {
            if seen.insert(step.name.as_str()) {
                names.push(step.name.as_str());
            }
        }
        names
    }
}

/// Hand-annotated answer key for one failure case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub mistake_agent: String,
    /// 0-based step ordinal of the first error.
    pub mistake_step: usize,
    pub mistake_reason: String,
}

/// Which benchmark subset a case belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    HandCrafted,
    AlgorithmGenerated,
}

impl Subset {
    pub fn id(&self) -> &'static str {
        match self {
            Subset::HandCrafted => "hand_crafted",
            Subset::AlgorithmGenerated => "algorithm_generated",
        }
    }

    pub fn parse(s: &str) -> Option<Subset> {
        match s {
            "hand_crafted" => Some(Subset::HandCrafted),
            "algorithm_generated" => Some(Subset::AlgorithmGenerated),
            _ => None,
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// A trace together with its gold annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCase {
    pub case_id: String,
    pub trace: InteractionTrace,
    pub gold: GoldAnnotation,
    pub source: Subset,
}

/// Step-index convention used by the annotation files.
///
/// The loader normalizes everything to 0-based internally; this knob only
/// affects how `mistake_step` is read from disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IndexBase {
    #[default]
    Zero,
    One,
}

fn require_str(
    obj: &Map<String, Value>,
    field: &str,
    location: &str,
) -> Result<String, TraceError> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(TraceError::parse(
            location,
            format!("field `{field}` must be a string"),
        )),
        None => Err(TraceError::parse(
            location,
            format!("missing field `{field}`"),
        )),
    }
}

fn optional_str(obj: &Map<String, Value>, field: &str) -> Option<String> {
    match obj.get(field) {
        Some(Value::String(s)) => Some(s.clone()),
        _ => None,
    }
}

/// Parse a structured-log document into a trace.
///
/// The document must carry a `history` array whose entries have at least
/// `name` and `content`; `role` defaults to the empty string. Document order
/// is preserved and indices are assigned 0..n-1. Unknown fields are ignored.
pub fn parse_trace(document: &Value) -> Result<InteractionTrace, TraceError> {
    let obj = document
        .as_object()
        .ok_or_else(|| TraceError::parse("$", "document must be a JSON object"))?;

    let history = match obj.get("history") {
        Some(Value::Array(items)) => items,
        Some(_) => return Err(TraceError::parse("history", "must be an array")),
        None => return Err(TraceError::parse("$", "missing field `history`")),
    };
    if history.is_empty() {
        return Err(TraceError::Validation("empty step array".to_string()));
    }

    let mut steps = Vec::with_capacity(history.len());
    for (i, item) in history.iter().enumerate() {
        let location = format!("history[{i}]");
        let entry = item
            .as_object()
            .ok_or_else(|| TraceError::parse(&location, "step must be an object"))?;
        steps.push(AgentStep {
            index: i,
            name: require_str(entry, "name", &location)?,
            role: optional_str(entry, "role").unwrap_or_default(),
            content: require_str(entry, "content", &location)?,
        });
    }

    Ok(InteractionTrace {
        steps,
        query: optional_str(obj, "question").unwrap_or_default(),
        final_answer: optional_str(obj, "final_answer").unwrap_or_default(),
        ground_truth: optional_str(obj, "ground_truth"),
    })
}

/// Parse a trace from raw JSON text.
pub fn parse_trace_str(text: &str) -> Result<InteractionTrace, TraceError> {
    let value: Value = serde_json::from_str(text).map_err(|e| TraceError::Json {
        path: PathBuf::from("<inline>"),
        source: e,
    })?;
    parse_trace(&value)
}

/// Render a trace back into the on-disk document shape.
///
/// `parse_trace(serialize_trace(t)) == t` for every valid trace.
pub fn serialize_trace(trace: &InteractionTrace) -> Value {
    let history: Vec<Value> = trace
        .steps
        .iter()
        .map(|s| json!({"name": s.name, "role": s.role, "content": s.content}))
        .collect();
    let mut doc = json!({
        "question": trace.query,
        "final_answer": trace.final_answer,
        "history": history,
    });
    if let Some(gt) = &trace.ground_truth {
        doc["ground_truth"] = Value::String(gt.clone());
    }
    doc
}

/// Parse one annotated case file (trace + gold annotation).
pub fn parse_case(
    document: &Value,
    case_id: &str,
    source: Subset,
    index_base: IndexBase,
) -> Result<LabeledCase, TraceError> {
    let trace = parse_trace(document)?;
    let obj = document.as_object().expect("checked by parse_trace");

    let mistake_agent = require_str(obj, "mistake_agent", "$")?;
    let raw_step = match obj.get("mistake_step") {
        Some(v) => v
            .as_i64()
            .or_else(|| v.as_str().and_then(|s| s.trim().parse::<i64>().ok()))
            .ok_or_else(|| TraceError::parse("mistake_step", "must be an integer"))?,
        None => return Err(TraceError::parse("$", "missing field `mistake_step`")),
    };
    let normalized = match index_base {
        IndexBase::Zero => raw_step,
        IndexBase::One => raw_step - 1,
    };
    if normalized < 0 {
        return Err(TraceError::Validation("step out of bounds".to_string()));
    }

    let case = LabeledCase {
        case_id: case_id.to_string(),
        trace,
        gold: GoldAnnotation {
            mistake_agent,
            mistake_step: normalized as usize,
            mistake_reason: optional_str(obj, "mistake_reason").unwrap_or_default(),
        },
        source,
    };

    let report = validate_case(&case);
    if !report.is_empty() {
        return Err(TraceError::Validation(report.violations.join("; ")));
    }
    Ok(case)
}

/// Result of checking every domain invariant on a labeled case.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// List every violated invariant of the case and its contained types.
/// Returns an empty report iff all invariants hold.
pub fn validate_case(case: &LabeledCase) -> ValidationReport {
    let mut violations = Vec::new();
    let n = case.trace.len();

    if case.case_id.is_empty() {
        violations.push("empty case id".to_string());
    }
    if n == 0 {
        violations.push("empty step array".to_string());
    }
    let indices_ok = case
        .trace
        .steps
        .iter()
        .enumerate()
        .all(|(i, s)| s.index == i);
    if !indices_ok {
        violations.push("non-contiguous indices".to_string());
    }
    for step in &case.trace.steps {
        if step.name.is_empty() {
            violations.push(format!("empty agent name at step {}", step.index));
        }
    }
    if case.gold.mistake_step >= n {
        violations.push("step out of bounds".to_string());
    }
    if !case
        .trace
        .steps
        .iter()
        .any(|s| s.name == case.gold.mistake_agent)
    {
        violations.push(format!(
            "mistake agent `{}` not found in trace",
            case.gold.mistake_agent
        ));
    }
    ValidationReport { violations }
}

/// One rejected file from a dataset load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseRejection {
    pub path: String,
    pub reason: String,
}

/// What the loader accepted and what it had to skip.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub loaded: usize,
    pub rejected: Vec<CaseRejection>,
}

/// File name of the dataset manifest expected under the dataset root.
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Deserialize)]
struct Manifest {
    #[serde(default)]
    subsets: std::collections::BTreeMap<String, Vec<String>>,
}

/// Load every parseable case of a subset, sorted by case id.
///
/// Invalid cases are skipped and reported, never silently dropped. A missing
/// manifest yields an empty dataset.
pub fn load_dataset(
    root: &Path,
    subset: Subset,
    index_base: IndexBase,
) -> Result<(Vec<LabeledCase>, LoadReport), TraceError> {
    let manifest_path = root.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Ok((Vec::new(), LoadReport::default()));
    }
    let raw = fs::read_to_string(&manifest_path).map_err(|e| TraceError::Io {
        path: manifest_path.clone(),
        source: e,
    })?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| TraceError::Json {
        path: manifest_path.clone(),
        source: e,
    })?;

    let mut report = LoadReport::default();
    let mut cases: Vec<LabeledCase> = Vec::new();
    let mut seen_ids = BTreeSet::new();

    let entries = manifest
        .subsets
        .get(subset.id())
        .cloned()
        .unwrap_or_default();
    for rel in entries {
        let path = root.join(&rel);
        let case_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| rel.clone());
        let outcome = fs::read_to_string(&path)
            .map_err(|e| TraceError::Io {
                path: path.clone(),
                source: e,
            })
            .and_then(|text| {
                serde_json::from_str::<Value>(&text).map_err(|e| TraceError::Json {
                    path: path.clone(),
                    source: e,
                })
            })
            .and_then(|doc| parse_case(&doc, &case_id, subset, index_base));
        match outcome {
            Ok(case) => {
                if seen_ids.insert(case.case_id.clone()) {
                    cases.push(case);
                } else {
                    report.rejected.push(CaseRejection {
                        path: rel,
                        reason: format!("duplicate case id `{case_id}`"),
                    });
                }
            }
            Err(e) => report.rejected.push(CaseRejection {
                path: rel,
                reason: e.to_string(),
            }),
        }
    }

    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    report.loaded = cases.len();
    Ok((cases, report))
}
