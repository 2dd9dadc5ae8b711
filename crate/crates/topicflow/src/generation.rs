//! The iterative topic-generation loop.
//!
//! One document at a time, the current topic list and the document are
//! rendered into the generation prompt; the model either echoes existing
//! topics or proposes new ones. Echoes increment a topic's generation
//! count, fresh labels are appended with count 1, and a drought counter
//! optionally stops the loop once new topics dry up. The pass is strictly
//! sequential because every prompt depends on the list the previous
//! documents produced.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, TokenEstimator};
use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::prompts::{PromptError, PromptTemplate};
use crate::sampling::{drought_update, DroughtState};
use crate::topics::{parse_topic_line, Topic, TopicList};

#[derive(Debug, Clone)]
pub struct GenerationConfig {
    pub model: String,
    pub template: PromptTemplate,
    /// Consecutive barren documents tolerated before stopping; None runs
    /// the whole sample.
    pub drought_threshold: Option<usize>,
    /// Per-document token budget; None sends documents untruncated.
    pub truncate_budget: Option<usize>,
    pub estimator: TokenEstimator,
    pub max_tokens: u32,
}

impl GenerationConfig {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            template: crate::prompts::default_generation_template(),
            drought_threshold: Some(100),
            truncate_budget: None,
            estimator: TokenEstimator::default(),
            max_tokens: 300,
        }
    }
}

/// One parsed topic mention within a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceTopic {
    pub level: u32,
    pub label: String,
    pub is_new: bool,
}

/// Per-document record of what the model said and what changed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub doc_id: String,
    pub raw_response: String,
    pub parsed: Vec<TraceTopic>,
    pub format_error: bool,
}

/// Processing-ordered trace of a generation pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub records: Vec<TraceRecord>,
    pub stopped_early: bool,
}

impl GenerationTrace {
    /// Cumulative list size after each processed document; nondecreasing
    /// by construction (topics are never removed during generation).
    pub fn growth_curve(&self, seed_count: usize) -> Vec<usize> {
        let mut size = seed_count;
        self.records
            .iter()
            .map(|r| {
                size += r.parsed.iter().filter(|t| t.is_new).count();
                size
            })
            .collect()
    }

    pub fn new_topic_count(&self) -> usize {
        self.records
            .iter()
            .flat_map(|r| &r.parsed)
            .filter(|t| t.is_new)
            .count()
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        fs::write(path, out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("generation sample is empty")]
    EmptySample,
    #[error("document \"{0}\" has empty text")]
    EmptyDocument(String),
    #[error("no topic line found in response: {response:?}")]
    FormatError { response: String },
    #[error(transparent)]
    Template(#[from] PromptError),
    #[error("provider failure after {} documents: {source}", partial.trace.records.len())]
    Provider {
        source: GatewayError,
        /// List and trace as they stood when the provider failed, so
        /// callers can persist partial progress.
        partial: Box<PartialPass>,
    },
}

/// State salvaged from an aborted pass.
#[derive(Debug)]
pub struct PartialPass {
    pub list: TopicList,
    pub trace: GenerationTrace,
}

/// Render the generation prompt for one document against the current list.
pub fn render_generation_prompt(
    topics: &TopicList,
    doc: &Document,
    template: &PromptTemplate,
) -> Result<String, GenerationError> {
    if doc.text.trim().is_empty() {
        return Err(GenerationError::EmptyDocument(doc.id.clone()));
    }
    template.require(&["topics", "document"])?;
    Ok(template.render(&[
        ("topics", &topics.prompt_block()),
        ("document", &doc.text),
    ]))
}

/// Parse a generation response into topics.
///
/// "None" alone (case-insensitive) means no topic. Otherwise every line
/// matching `[level] Label: Description` yields a topic; other lines are
/// skipped with a warning. A response where nothing parses is a
/// FormatError.
pub fn parse_generation_response(text: &str) -> Result<Vec<Topic>, GenerationError> {
    let trimmed = text.trim();
    if trimmed.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut topics = Vec::new();
    for line in trimmed.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match parse_topic_line(line) {
            Some(Ok(topic)) => topics.push(topic),
            Some(Err(e)) => log::warn!("skipping invalid topic line {line:?}: {e}"),
            None => log::warn!("skipping non-topic line {line:?}"),
        }
    }
    if topics.is_empty() {
        return Err(GenerationError::FormatError {
            response: text.to_string(),
        });
    }
    Ok(topics)
}

/// Run the generation loop over a sample, starting from seed topics.
///
/// Format errors skip the document (recorded in the trace, counted as
/// barren for the drought rule); provider errors abort, handing back the
/// partial list and trace inside the error.
pub fn generation_pass(
    sample: &Corpus,
    seeds: &TopicList,
    gateway: &Gateway,
    config: &GenerationConfig,
) -> Result<(TopicList, GenerationTrace), GenerationError> {
    if sample.is_empty() {
        return Err(GenerationError::EmptySample);
    }
    let mut list = seeds.clone();
    let mut trace = GenerationTrace::default();
    let mut drought = config.drought_threshold.map(DroughtState::new);

    for doc in sample.documents() {
        let doc = match config.truncate_budget {
            Some(budget) => config.estimator.truncate(doc, budget),
            None => doc.clone(),
        };
        let prompt = render_generation_prompt(&list, &doc, &config.template)?;
        let request =
            CompletionRequest::new(&config.model, prompt).with_max_tokens(config.max_tokens);
        let response = match gateway.complete(&request) {
            Ok(r) => r,
            Err(source) => {
                return Err(GenerationError::Provider {
                    source,
                    partial: Box::new(PartialPass { list, trace }),
                })
            }
        };

        let mut record = TraceRecord {
            doc_id: doc.id.clone(),
            raw_response: response.text.clone(),
            parsed: Vec::new(),
            format_error: false,
        };
        let mut new_topics = 0usize;
        match parse_generation_response(&response.text) {
            Ok(topics) => {
                for topic in topics {
                    let is_new = list.find_at(topic.level, &topic.label).is_none();
                    if is_new {
                        new_topics += 1;
                        let label = topic.label.clone();
                        let level = topic.level;
                        list.push(topic.with_count(1)).unwrap_or_else(|e| {
                            unreachable!("membership checked before push: {e}")
                        });
                        record.parsed.push(TraceTopic {
                            level,
                            label,
                            is_new: true,
                        });
                    } else {
                        list.increment(topic.level, &topic.label);
                        record.parsed.push(TraceTopic {
                            level: topic.level,
                            label: topic.label,
                            is_new: false,
                        });
                    }
                }
            }
            Err(GenerationError::FormatError { response }) => {
                log::warn!(
                    "document {}: unparseable generation response, skipping: {response:?}",
                    doc.id
                );
                record.format_error = true;
            }
            Err(other) => return Err(other),
        }
        trace.records.push(record);

        if let Some(state) = drought {
            let (next, stop) = drought_update(state, new_topics);
            drought = Some(next);
            if stop {
                log::info!(
                    "topic drought: {} documents without a new topic, stopping",
                    next.docs_since_new_topic
                );
                trace.stopped_early = true;
                break;
            }
        }
    }
    Ok((list, trace))
}
