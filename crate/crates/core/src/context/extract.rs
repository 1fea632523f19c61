//! Pattern-driven text extractors with strict word budgets and fallback
//! chains, one extractor per compression layer.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionBackend, CompletionRequest};

/// Word budget for the key-decision layer.
pub const KEY_DECISION_BUDGET: usize = 50;
/// Word budget for the summary layer.
pub const SUMMARY_BUDGET: usize = 20;
/// Word budget for the milestone layer.
pub const MILESTONE_BUDGET: usize = 15;

/// Fallback literal for blank content in the key-decision and summary layers.
pub const NO_CONTENT: &str = "No content available";
/// Fallback literal for blank content in the milestone layer.
pub const NO_MILESTONES: &str = "No milestones available";

/// Which signal family the extractors should prefer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextType {
    Handoff,
    DecisionQuality,
    ErrorPropagation,
    #[default]
    General,
}

impl ContextType {
    pub fn id(&self) -> &'static str {
        match self {
            ContextType::Handoff => "handoff",
            ContextType::DecisionQuality => "decision_quality",
            ContextType::ErrorPropagation => "error_propagation",
            ContextType::General => "general",
        }
    }

    pub fn parse(s: &str) -> Option<ContextType> {
        match s {
            "handoff" => Some(ContextType::Handoff),
            "decision_quality" => Some(ContextType::DecisionQuality),
            "error_propagation" => Some(ContextType::ErrorPropagation),
            "general" => Some(ContextType::General),
            _ => None,
        }
    }

    pub const ALL: [ContextType; 4] = [
        ContextType::Handoff,
        ContextType::DecisionQuality,
        ContextType::ErrorPropagation,
        ContextType::General,
    ];
}

impl fmt::Display for ContextType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// How much detail a context entry carries, determined by distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetailLevel {
    Full,
    KeyDecisions,
    Summary,
    Milestones,
}

impl DetailLevel {
    /// Word budget for this level; `None` means uncompressed.
    pub fn budget(&self) -> Option<usize> {
        match self {
            DetailLevel::Full => None,
            DetailLevel::KeyDecisions => Some(KEY_DECISION_BUDGET),
            DetailLevel::Summary => Some(SUMMARY_BUDGET),
            DetailLevel::Milestones => Some(MILESTONE_BUDGET),
        }
    }

    /// Literal used when a source step has no usable content.
    pub fn blank_fallback(&self) -> &'static str {
        match self {
            DetailLevel::Milestones => NO_MILESTONES,
            _ => NO_CONTENT,
        }
    }
}

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("failed to read pattern table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid pattern table: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("unknown section `{0}` in pattern table")]
    UnknownSection(String),
    #[error("unknown context type `{0}` in pattern table")]
    UnknownContextType(String),
    #[error("invalid pattern `{pattern}`: {source}")]
    Regex {
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

const DEFAULT_TABLE_TOML: &str = include_str!("../../patterns/default_patterns.toml");

static BUILTIN_TABLE: LazyLock<PatternTable> = LazyLock::new(|| {
    PatternTable::from_toml_str(DEFAULT_TABLE_TOML).expect("shipped pattern table is valid")
});

/// Ordered, compiled pattern sets keyed by (layer, context type).
///
/// The shipped defaults live in `patterns/default_patterns.toml`; callers may
/// load a replacement table from disk with the same section layout.
#[derive(Debug)]
pub struct PatternTable {
    sets: BTreeMap<(DetailLevel, ContextType), Vec<Regex>>,
}

impl Default for PatternTable {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_TABLE_TOML).expect("shipped pattern table is valid")
    }
}

impl PatternTable {
    /// The compiled built-in table.
    pub fn builtin() -> &'static PatternTable {
        &BUILTIN_TABLE
    }

    pub fn from_toml_str(text: &str) -> Result<PatternTable, PatternError> {
        type Raw = BTreeMap<String, BTreeMap<String, Vec<String>>>;
        let raw: Raw = toml::from_str(text)?;
        let mut sets = BTreeMap::new();
        for (section, by_type) in raw {
            let layer = match section.as_str() {
                "key_decisions" => DetailLevel::KeyDecisions,
                "summary" => DetailLevel::Summary,
                "milestones" => DetailLevel::Milestones,
                other => return Err(PatternError::UnknownSection(other.to_string())),
            };
            for (type_id, patterns) in by_type {
                let context_type = ContextType::parse(&type_id)
                    .ok_or_else(|| PatternError::UnknownContextType(type_id.clone()))?;
                let compiled = patterns
                    .iter()
                    .map(|p| {
                        RegexBuilder::new(p)
                            .case_insensitive(true)
                            .build()
                            .map_err(|e| PatternError::Regex {
                                pattern: p.clone(),
                                source: e,
                            })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                sets.insert((layer, context_type), compiled);
            }
        }
        Ok(PatternTable { sets })
    }

    pub fn from_path(path: &Path) -> Result<PatternTable, PatternError> {
        let text = std::fs::read_to_string(path).map_err(|e| PatternError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    fn patterns(&self, layer: DetailLevel, context_type: ContextType) -> &[Regex] {
        self.sets
            .get(&(layer, context_type))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// First capture of the first matching pattern, if any.
    fn first_capture<'a>(
        &self,
        layer: DetailLevel,
        context_type: ContextType,
        content: &'a str,
    ) -> Option<&'a str> {
        for re in self.patterns(layer, context_type) {
            if let Some(caps) = re.captures(content) {
                if let Some(m) = caps.get(1) {
                    return Some(m.as_str());
                }
            }
        }
        None
    }

    /// Key decision or main point of the content (nearby-context layer).
    pub fn extract_key_decision(
        &self,
        content: &str,
        max_words: usize,
        context_type: ContextType,
    ) -> String {
        if content.trim().is_empty() {
            return NO_CONTENT.to_string();
        }
        if let Some(capture) = self.first_capture(DetailLevel::KeyDecisions, context_type, content)
        {
            return truncate_words(capture.trim(), max_words);
        }
        // Fallback: first sentence, closed with a period when missing.
        let mut sentence = content.split(". ").next().unwrap_or("").trim().to_string();
        if !sentence.ends_with('.') {
            sentence.push('.');
        }
        truncate_words(&sentence, max_words)
    }

    /// Brief summary of the content (distant-context layer).
    pub fn summarize_agent(
        &self,
        content: &str,
        max_words: usize,
        context_type: ContextType,
    ) -> String {
        if content.trim().is_empty() {
            return NO_CONTENT.to_string();
        }
        let cleaned = collapse_whitespace(content);
        if let Some(capture) = self.first_capture(DetailLevel::Summary, context_type, &cleaned) {
            return truncate_words(capture.trim(), max_words);
        }
        let sentence = cleaned.split(". ").next().unwrap_or("").trim();
        truncate_words(sentence, max_words)
    }

    /// Milestone-level information from the content (global-context layer).
    pub fn obtain_milestones(
        &self,
        content: &str,
        max_words: usize,
        context_type: ContextType,
    ) -> String {
        if content.trim().is_empty() {
            return NO_MILESTONES.to_string();
        }
        let cleaned = collapse_whitespace(content);
        if let Some(capture) = self.first_capture(DetailLevel::Milestones, context_type, &cleaned) {
            return truncate_words(capture.trim(), max_words);
        }
        let sentence = cleaned.split(". ").next().unwrap_or("").trim();
        truncate_words(sentence, max_words)
    }

    /// Run the extractor matching `layer` with its default budget.
    pub fn extract_for_layer(
        &self,
        layer: DetailLevel,
        content: &str,
        context_type: ContextType,
    ) -> String {
        match layer {
            DetailLevel::Full => content.to_string(),
            DetailLevel::KeyDecisions => {
                self.extract_key_decision(content, KEY_DECISION_BUDGET, context_type)
            }
            DetailLevel::Summary => self.summarize_agent(content, SUMMARY_BUDGET, context_type),
            DetailLevel::Milestones => {
                self.obtain_milestones(content, MILESTONE_BUDGET, context_type)
            }
        }
    }
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keep at most `max_words` whitespace-separated words, gluing a trailing
/// `...` onto the last word iff anything was dropped.
fn truncate_words(text: &str, max_words: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() > max_words {
        format!("{}...", words[..max_words].join(" "))
    } else {
        words.join(" ")
    }
}

/// Extract a key decision with the default budget and context type.
pub fn extract_key_decision(content: &str, max_words: usize, context_type: ContextType) -> String {
    PatternTable::builtin().extract_key_decision(content, max_words, context_type)
}

/// Summarize content with the default budget and context type.
pub fn summarize_agent(content: &str, max_words: usize, context_type: ContextType) -> String {
    PatternTable::builtin().summarize_agent(content, max_words, context_type)
}

/// Extract milestones with the default budget and context type.
pub fn obtain_milestones(content: &str, max_words: usize, context_type: ContextType) -> String {
    PatternTable::builtin().obtain_milestones(content, max_words, context_type)
}

/// Provider-backed extraction for one layer, honoring the layer's word
/// budget. Any provider failure falls back to the pattern-based extractor;
/// context construction never aborts.
pub fn extract_with_model(
    backend: &dyn CompletionBackend,
    content: &str,
    layer: DetailLevel,
    context_type: ContextType,
    table: &PatternTable,
    model_id: &str,
) -> String {
    let Some(budget) = layer.budget() else {
        return content.to_string();
    };
    if content.trim().is_empty() {
        return layer.blank_fallback().to_string();
    }

    let what = match layer {
        DetailLevel::KeyDecisions => "the key decision or main point",
        DetailLevel::Summary => "a brief summary",
        DetailLevel::Milestones => "milestone-level information",
        DetailLevel::Full => unreachable!("full layer handled above"),
    };
    let request = CompletionRequest::new(
        "You compress one agent's utterance from a multi-agent conversation. \
         Reply with only the compressed text, no preamble.",
        format!(
            "Extract {what} from the content below in at most {budget} words. \
             Focus on {} signals.\n\nContent:\n{content}",
            context_type.id().replace('_', " ")
        ),
    )
    .with_temperature(0.0)
    .with_max_tokens(256)
    .with_model_id(model_id);

    match backend.complete(&request) {
        Ok(response) => truncate_words(response.text.trim(), budget),
        Err(e) => {
            log::warn!("model extraction failed, using pattern fallback: {e}");
            table.extract_for_layer(layer, content, context_type)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_inputs_yield_layer_literals() {
        for ct in ContextType::ALL {
            assert_eq!(extract_key_decision("", 50, ct), NO_CONTENT);
            assert_eq!(summarize_agent("  \n\t ", 20, ct), NO_CONTENT);
            assert_eq!(obtain_milestones("", 15, ct), NO_MILESTONES);
        }
    }

    #[test]
    fn first_matching_pattern_wins() {
        let out = extract_key_decision(
            "Therefore, we should use gradient descent.",
            50,
            ContextType::DecisionQuality,
        );
        assert_eq!(out, "we should use gradient descent.");
    }

    #[test]
    fn pattern_order_beats_position() {
        // "completed" is listed before "successfully" in the milestone table,
        // so it wins even though "successfully" appears earlier in the text.
        let out = obtain_milestones(
            "Successfully completed the data ingestion phase.",
            15,
            ContextType::General,
        );
        assert_eq!(out, "the data ingestion phase.");
    }

    #[test]
    fn fallback_truncates_with_ellipsis() {
        let long: String = (0..60).map(|i| format!("w{i} ")).collect();
        let out = extract_key_decision(long.trim(), 50, ContextType::General);
        assert!(out.ends_with("..."));
        assert_eq!(out.split_whitespace().count(), 50);
    }

    #[test]
    fn key_decision_fallback_appends_period() {
        let out = extract_key_decision("plain text with no markers", 50, ContextType::General);
        assert_eq!(out, "plain text with no markers.");
    }

    #[test]
    fn summary_fallback_does_not_append_period() {
        let out = summarize_agent(
            "Classification blocked: missing features",
            20,
            ContextType::ErrorPropagation,
        );
        assert_eq!(out, "Classification blocked: missing features");
    }

    #[test]
    fn extraction_is_deterministic() {
        let text = "I conclude the run failed. However we retried.";
        let a = extract_key_decision(text, 50, ContextType::DecisionQuality);
        let b = extract_key_decision(text, 50, ContextType::DecisionQuality);
        assert_eq!(a, b);
    }

    #[test]
    fn custom_table_rejects_bad_regex() {
        let err = PatternTable::from_toml_str("[summary]\ngeneral = ['(unclosed']\n").unwrap_err();
        assert!(matches!(err, PatternError::Regex { .. }));
    }

    #[test]
    fn model_extraction_passes_through_within_budget() {
        let backend = crate::gateway::ScriptedBackend::fixed_text("SUMMARY");
        let out = extract_with_model(
            &backend,
            "some content.",
            DetailLevel::Summary,
            ContextType::General,
            PatternTable::builtin(),
            "m",
        );
        assert_eq!(out, "SUMMARY");
    }

    #[test]
    fn model_extraction_falls_back_on_provider_error() {
        let backend = crate::gateway::ScriptedBackend::failing("down");
        let input = "Therefore, we should retry tomorrow.";
        let out = extract_with_model(
            &backend,
            input,
            DetailLevel::KeyDecisions,
            ContextType::DecisionQuality,
            PatternTable::builtin(),
            "m",
        );
        assert_eq!(
            out,
            extract_key_decision(input, KEY_DECISION_BUDGET, ContextType::DecisionQuality)
        );
    }

    #[test]
    fn model_extraction_truncates_overflow_to_budget() {
        let long_reply: String = (0..30).map(|i| format!("w{i} ")).collect();
        let backend = crate::gateway::ScriptedBackend::fixed_text(long_reply.trim().to_string());
        let out = extract_with_model(
            &backend,
            "content",
            DetailLevel::Milestones,
            ContextType::General,
            PatternTable::builtin(),
            "m",
        );
        assert_eq!(out.split_whitespace().count(), MILESTONE_BUDGET);
        assert!(out.ends_with("..."));
    }

    #[test]
    fn model_extraction_skips_provider_for_blank_and_full() {
        let backend = crate::gateway::ScriptedBackend::failing("must not be called");
        let out = extract_with_model(
            &backend,
            "  ",
            DetailLevel::Summary,
            ContextType::General,
            PatternTable::builtin(),
            "m",
        );
        assert_eq!(out, NO_CONTENT);
        let out = extract_with_model(
            &backend,
            "verbatim text",
            DetailLevel::Full,
            ContextType::General,
            PatternTable::builtin(),
            "m",
        );
        assert_eq!(out, "verbatim text");
    }

    #[test]
    fn golden_conformance() {
        #[derive(serde::Deserialize)]
        struct Golden {
            layer: String,
            context_type: String,
            max_words: usize,
            input: String,
            expected: String,
        }
        let raw = include_str!("../../tests/data/extraction_golden.json");
        let cases: Vec<Golden> = serde_json::from_str(raw).unwrap();
        assert_eq!(cases.len(), 25);
        for case in cases {
            let ct = ContextType::parse(&case.context_type).unwrap();
            let actual = match case.layer.as_str() {
                "key_decision" => extract_key_decision(&case.input, case.max_words, ct),
                "summary" => summarize_agent(&case.input, case.max_words, ct),
                "milestones" => obtain_milestones(&case.input, case.max_words, ct),
                other => panic!("unknown layer {other}"),
            };
            assert_eq!(
                actual, case.expected,
                "layer={} type={} input={:?}",
                case.layer, case.context_type, case.input
            );
        }
    }
}
