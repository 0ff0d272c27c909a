//! Prompt templates. Each template carries an `{{input}}` placeholder that is
//! replaced by the stage payload as a fenced JSON block.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::PipelineError;

pub const SUMMARIZE: &str = "summarize";
pub const ASPECTS: &str = "aspects";
pub const PERSONAS: &str = "personas";
pub const ALIGN: &str = "align";

const PLACEHOLDER: &str = "{{input}}";
const FENCE_OPEN: &str = "```json\n";
const FENCE_CLOSE: &str = "\n```";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub summarize: String,
    pub aspects: String,
    pub personas: String,
    pub align: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            summarize: include_str!("prompts/summarize.txt").to_string(),
            aspects: include_str!("prompts/aspects.txt").to_string(),
            personas: include_str!("prompts/personas.txt").to_string(),
            align: include_str!("prompts/align.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    /// Built-in templates, overridden by any `<id>.txt` found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PipelineError> {
        let mut t = Self::default();
        for (id, slot) in [
            (SUMMARIZE, &mut t.summarize),
            (ASPECTS, &mut t.aspects),
            (PERSONAS, &mut t.personas),
            (ALIGN, &mut t.align),
        ] {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                *slot = fs::read_to_string(&path)
                    .map_err(|e| PipelineError::Config(format!("reading {}: {e}", path.display())))?;
            }
        }
        Ok(t)
    }

    pub fn get(&self, template_id: &str) -> Option<&str> {
        match template_id {
            SUMMARIZE => Some(&self.summarize),
            ASPECTS => Some(&self.aspects),
            PERSONAS => Some(&self.personas),
            ALIGN => Some(&self.align),
            _ => None,
        }
    }

    pub fn render<P: Serialize>(&self, template_id: &str, payload: &P) -> String {
        let template = self.get(template_id).unwrap_or(PLACEHOLDER);
        let json = serde_json::to_string_pretty(payload).expect("payload serializes");
        let block = format!("{FENCE_OPEN}{json}{FENCE_CLOSE}");
        if template.contains(PLACEHOLDER) {
            template.replace(PLACEHOLDER, &block)
        } else {
            format!("{template}\n\n{block}")
        }
    }
}

/// The last fenced JSON block in `text`, or the whole text when unfenced.
pub fn extract_json_block(text: &str) -> &str {
    if let Some(start) = text.rfind(FENCE_OPEN) {
        let body = &text[start + FENCE_OPEN.len()..];
        if let Some(end) = body.find("```") {
            return body[..end].trim();
        }
    }
    if let Some(start) = text.rfind("```") {
        // Completion fenced without a language tag.
        let before = &text[..start];
        if let Some(open) = before.rfind("```") {
            return before[open + 3..].trim();
        }
    }
    text.trim()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_then_extract() {
        let t = PromptTemplates::default();
        let prompt = t.render(SUMMARIZE, &serde_json::json!({"title": "X"}));
        let v: serde_json::Value = serde_json::from_str(extract_json_block(&prompt)).unwrap();
        assert_eq!(v["title"], "X");
    }

    #[test]
    fn extract_handles_bare_and_plain_fences() {
        assert_eq!(extract_json_block(" {\"a\":1} "), "{\"a\":1}");
        assert_eq!(extract_json_block("here:\n```\n{\"a\":1}\n```\n"), "{\"a\":1}");
    }

    #[test]
    fn overrides_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("align.txt"), "judge {{input}}").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.align, "judge {{input}}");
        assert_eq!(t.summarize, PromptTemplates::default().summarize);
    }
}
