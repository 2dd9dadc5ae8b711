//! Prompt templates with `{placeholder}` substitution.
//!
//! Templates are plain text; a placeholder is a brace-wrapped name like
//! `{document}`. Each pipeline stage validates that its template contains
//! the placeholders it needs before rendering, so a miswired custom
//! template fails loudly instead of producing a prompt with a hole in it.
//! Braces are reserved for placeholders; default templates ship in
//! `assets/templates/`.

use std::fs;
use std::path::Path;

/// A named template plus the substitution machinery.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    name: String,
    text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template \"{template}\" is missing required placeholder {{{placeholder}}}")]
    MissingPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("cannot read template file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            text: text.into(),
        }
    }

    pub fn from_file(name: impl Into<String>, path: &Path) -> Result<Self, PromptError> {
        let text = fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(Self::new(name, text))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Verify every named placeholder occurs in the template text.
    pub fn require(&self, placeholders: &[&str]) -> Result<(), PromptError> {
        for p in placeholders {
            if !self.text.contains(&format!("{{{p}}}")) {
                return Err(PromptError::MissingPlaceholder {
                    template: self.name.clone(),
                    placeholder: (*p).to_string(),
                });
            }
        }
        Ok(())
    }

    /// Substitute all placeholders. Unknown placeholders in the template
    /// are left as-is; callers guard with [`PromptTemplate::require`].
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = self.text.clone();
        for (name, value) in values {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out
    }
}

/// First-level topic generation (placeholders: topics, document).
pub fn default_generation_template() -> PromptTemplate {
    PromptTemplate::new(
        "generation",
        include_str!("../assets/templates/generation.txt"),
    )
}

/// Second-level subtopic generation (placeholders: topic_branch, documents).
pub fn default_subtopics_template() -> PromptTemplate {
    PromptTemplate::new(
        "subtopics",
        include_str!("../assets/templates/subtopics.txt"),
    )
}

/// Topic merging (placeholder: topics).
pub fn default_merge_template() -> PromptTemplate {
    PromptTemplate::new("merge", include_str!("../assets/templates/merge.txt"))
}

/// Topic assignment (placeholders: topics, document).
pub fn default_assignment_template() -> PromptTemplate {
    PromptTemplate::new(
        "assignment",
        include_str!("../assets/templates/assignment.txt"),
    )
}

/// Self-correction reassignment (placeholders: error_kind, topics, document).
pub fn default_correction_template() -> PromptTemplate {
    PromptTemplate::new(
        "correction",
        include_str!("../assets/templates/correction.txt"),
    )
}

/// The two default seed topics shipped with the crate.
pub fn default_seed_topics() -> &'static str {
    include_str!("../assets/seed_topics.txt")
}
