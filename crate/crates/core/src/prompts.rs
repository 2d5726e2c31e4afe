//! Editable prompt templates with `{name}` placeholders.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MODERNIZE_SYSTEM: &str = "modernize_system";
pub const MODERNIZE_USER: &str = "modernize_user";
pub const INSTRUCTION: &str = "instruction";
pub const EXPAND_QUERY: &str = "expand_query";
pub const BASE: &str = "base";
pub const RAG: &str = "rag";
pub const RAG_EXAMPLE: &str = "rag_example";
pub const FIX: &str = "fix";

/// The sentence appended to every retrieval-augmented prompt.
pub const SELECTIVE_CONTEXT: &str =
    "If retrieved examples are not relevant to this challenge, ignore them and rely on your own PennyLane knowledge.";

const BUNDLED: [(&str, &str); 8] = [
    (MODERNIZE_SYSTEM, include_str!("../assets/prompts/modernize_system.txt")),
    (MODERNIZE_USER, include_str!("../assets/prompts/modernize_user.txt")),
    (INSTRUCTION, include_str!("../assets/prompts/instruction.txt")),
    (EXPAND_QUERY, include_str!("../assets/prompts/expand_query.txt")),
    (BASE, include_str!("../assets/prompts/base.txt")),
    (RAG, include_str!("../assets/prompts/rag.txt")),
    (RAG_EXAMPLE, include_str!("../assets/prompts/rag_example.txt")),
    (FIX, include_str!("../assets/prompts/fix.txt")),
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("reading prompt {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<&'static str, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::bundled()
    }
}

impl PromptSet {
    pub fn bundled() -> Self {
        Self {
            templates: BUNDLED
                .iter()
                .map(|(k, v)| (*k, v.trim_end_matches('\n').to_owned()))
                .collect(),
        }
    }

    /// Bundled templates, with any `<name>.txt` found in `dir` taking
    /// precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::bundled();
        for (name, _) in BUNDLED {
            let path = dir.join(format!("{name}.txt"));
            if path.is_file() {
                let text = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                set.templates.insert(name, text.trim_end_matches('\n').to_owned());
            }
        }
        Ok(set)
    }

    pub fn template(&self, name: &str) -> &str {
        self.templates.get(name).map_or("", String::as_str)
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        render(self.template(name), vars)
    }
}

/// Substitutes `{key}` placeholders in one pass; substituted text is not
/// rescanned and unknown placeholders are left as written.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let key = close.map(|c| &after[..c]);
        match key.and_then(|k| vars.iter().find(|(name, _)| *name == k)) {
            Some((k, value)) => {
                out.push_str(value);
                rest = &after[k.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
