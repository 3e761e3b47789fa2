//! Prompt templates.
//!
//! Templates are plain text with `{source}`, `{intention}`, `{n_versions}`
//! and `{entry_point}` placeholders. The built-in set is compiled in; a
//! directory of same-named files overrides it.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatRequest, DEFAULT_MODEL};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    InferIntention,
    GenerateReferences,
    GenerateInputs,
    BaselineHasBug,
    BaselineMakeTest,
    StrawmanFix,
}

impl PromptKind {
    pub const ALL: [PromptKind; 6] = [
        PromptKind::InferIntention,
        PromptKind::GenerateReferences,
        PromptKind::GenerateInputs,
        PromptKind::BaselineHasBug,
        PromptKind::BaselineMakeTest,
        PromptKind::StrawmanFix,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::InferIntention => "infer_intention.txt",
            PromptKind::GenerateReferences => "generate_references.txt",
            PromptKind::GenerateInputs => "generate_inputs.txt",
            PromptKind::BaselineHasBug => "baseline_has_bug.txt",
            PromptKind::BaselineMakeTest => "baseline_make_test.txt",
            PromptKind::StrawmanFix => "strawman_fix.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::InferIntention => include_str!("../../templates/infer_intention.txt"),
            PromptKind::GenerateReferences => include_str!("../../templates/generate_references.txt"),
            PromptKind::GenerateInputs => include_str!("../../templates/generate_inputs.txt"),
            PromptKind::BaselineHasBug => include_str!("../../templates/baseline_has_bug.txt"),
            PromptKind::BaselineMakeTest => include_str!("../../templates/baseline_make_test.txt"),
            PromptKind::StrawmanFix => include_str!("../../templates/strawman_fix.txt"),
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// What each prompt may see. Reference generation deliberately carries no
/// program source: references are written from the intention alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptContext<'a> {
    InferIntention { source: &'a str, entry_point: &'a str },
    GenerateReferences { intention: &'a str, n_versions: usize, entry_point: &'a str },
    GenerateInputs { source: &'a str, entry_point: &'a str },
    BaselineHasBug { source: &'a str, entry_point: &'a str },
    BaselineMakeTest { entry_point: &'a str },
    StrawmanFix { n_versions: usize, entry_point: &'a str },
}

impl PromptContext<'_> {
    pub fn kind(&self) -> PromptKind {
        match self {
            PromptContext::InferIntention { .. } => PromptKind::InferIntention,
            PromptContext::GenerateReferences { .. } => PromptKind::GenerateReferences,
            PromptContext::GenerateInputs { .. } => PromptKind::GenerateInputs,
            PromptContext::BaselineHasBug { .. } => PromptKind::BaselineHasBug,
            PromptContext::BaselineMakeTest { .. } => PromptKind::BaselineMakeTest,
            PromptContext::StrawmanFix { .. } => PromptKind::StrawmanFix,
        }
    }

    fn lookup(&self, name: &str) -> Option<String> {
        use PromptContext::*;
        match (self, name) {
            (
                InferIntention { source, .. } | GenerateInputs { source, .. } | BaselineHasBug { source, .. },
                "source",
            ) => Some(source.to_string()),
            (GenerateReferences { intention, .. }, "intention") => Some(intention.to_string()),
            (GenerateReferences { n_versions, .. } | StrawmanFix { n_versions, .. }, "n_versions") => {
                Some(n_versions.to_string())
            }
            (
                InferIntention { entry_point, .. }
                | GenerateReferences { entry_point, .. }
                | GenerateInputs { entry_point, .. }
                | BaselineHasBug { entry_point, .. }
                | BaselineMakeTest { entry_point }
                | StrawmanFix { entry_point, .. },
                "entry_point",
            ) => Some(entry_point.to_string()),
            _ => None,
        }
    }
}

/// Templates plus the model settings used to turn them into requests.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBook {
    templates: HashMap<PromptKind, String>,
    pub model: String,
    pub temperature_intent: f64,
    pub temperature_gen: f64,
}

impl Default for PromptBook {
    fn default() -> Self {
        PromptBook {
            templates: PromptKind::ALL.iter().map(|k| (*k, k.builtin().to_string())).collect(),
            model: DEFAULT_MODEL.to_string(),
            temperature_intent: 0.2,
            temperature_gen: 1.0,
        }
    }
}

impl PromptBook {
    /// Built-in templates, overridden by any same-named files in `dir`.
    pub fn with_overrides(mut self, dir: impl AsRef<Path>) -> Result<Self> {
        for kind in PromptKind::ALL {
            let path = dir.as_ref().join(kind.file_name());
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                self.templates.insert(kind, text);
            }
        }
        Ok(self)
    }

    pub fn set_template(&mut self, kind: PromptKind, text: impl Into<String>) {
        self.templates.insert(kind, text.into());
    }

    pub fn template(&self, kind: PromptKind) -> &str {
        &self.templates[&kind]
    }

    pub fn temperature(&self, kind: PromptKind) -> f64 {
        match kind {
            PromptKind::InferIntention => self.temperature_intent,
            _ => self.temperature_gen,
        }
    }

    /// Renders `kind` with `ctx` into a single-message request.
    pub fn render_prompt(&self, kind: PromptKind, ctx: &PromptContext<'_>) -> Result<ChatRequest> {
        if ctx.kind() != kind {
            return Err(Error::Config(format!("context for {} used to render {kind}", ctx.kind())));
        }
        let content = substitute(self.template(kind), |name| {
            ctx.lookup(name)
                .ok_or_else(|| Error::MissingPlaceholder { kind: kind.to_string(), placeholder: name.to_string() })
        })?;
        Ok(ChatRequest {
            model: self.model.clone(),
            temperature: self.temperature(kind),
            messages: vec![ChatMessage::user(content.trim_end())],
        })
    }
}

/// Replaces `{identifier}` occurrences in a single pass; substituted text is
/// never rescanned.
fn substitute(template: &str, mut value: impl FnMut(&str) -> Result<String>) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let ident_len = after.find(|c: char| !(c.is_ascii_lowercase() || c == '_')).unwrap_or(after.len());
        if ident_len > 0 && after[ident_len..].starts_with('}') {
            out.push_str(&value(&after[..ident_len])?);
            rest = &after[ident_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}
