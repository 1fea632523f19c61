//! Prompt templates, shipped as editable text files and keyed by name.
//! Users can override any template by pointing the library at a directory
//! of replacement `.txt` files.

use std::collections::BTreeMap;
use std::path::Path;

macro_rules! builtin_templates {
    ($($key:literal),+ $(,)?) => {
        &[$(($key, include_str!(concat!("../templates/", $key, ".txt")))),+]
    };
}

const BUILTIN: &[(&str, &str)] = builtin_templates![
    "objective_system",
    "objective_user",
    "phase_agent",
    "phase_step",
    "argue_system",
    "argue_user_fixed",
    "argue_user_hierarchical",
    "judge_system",
    "judge_user",
    "all_at_once_system",
    "all_at_once_user",
    "step_by_step_system",
    "step_by_step_user",
    "binary_search_system",
    "binary_search_user",
];

#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<String, String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Built-in templates with any `<name>.txt` files from `dir` layered on
    /// top. Unknown names are accepted (they become new keys).
    pub fn with_overrides_from(dir: &Path) -> std::io::Result<Self> {
        let mut library = Self::builtin();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                library
                    .templates
                    .insert(stem.to_string(), std::fs::read_to_string(&path)?);
            }
        }
        Ok(library)
    }

    pub fn get(&self, key: &str) -> &str {
        self.templates
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unknown prompt template `{key}`"))
    }

    /// Substitute `{name}` placeholders. Only the given names are replaced,
    /// so JSON braces inside templates pass through untouched.
    pub fn render(&self, key: &str, substitutions: &[(&str, &str)]) -> String {
        let mut text = self.get(key).to_string();
        for (name, value) in substitutions {
            text = text.replace(&format!("{{{name}}}"), value);
        }
        text
    }
}

/// `Ground Truth: ...` line for prompts, or empty when withheld or unknown.
pub fn ground_truth_section(ground_truth: Option<&str>, with_ground_truth: bool) -> String {
    match ground_truth {
        Some(gt) if with_ground_truth => format!("Ground Truth: {gt}\n"),
        _ => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_are_present() {
        let library = PromptLibrary::builtin();
        for (key, _) in BUILTIN {
            assert!(!library.get(key).is_empty(), "{key}");
        }
    }

    #[test]
    fn render_leaves_json_braces_alone() {
        let library = PromptLibrary::builtin();
        let rendered = library.render("objective_system", &[("focus_instructions", "F")]);
        assert!(rendered.contains("ANALYST SPECIALIZATION: F"));
        assert!(rendered.contains("\"mistake_step\""));
    }

    #[test]
    fn overrides_replace_builtin_text() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("judge_user.txt"), "custom {query}").unwrap();
        let library = PromptLibrary::with_overrides_from(dir.path()).unwrap();
        assert_eq!(library.render("judge_user", &[("query", "Q")]), "custom Q");
        // untouched keys still come from the builtin set
        assert!(library.get("judge_system").contains("Final Judge Agent"));
    }

    #[test]
    fn ground_truth_section_respects_flag() {
        assert_eq!(ground_truth_section(Some("42"), true), "Ground Truth: 42\n");
        assert_eq!(ground_truth_section(Some("42"), false), "");
        assert_eq!(ground_truth_section(None, true), "");
    }
}
