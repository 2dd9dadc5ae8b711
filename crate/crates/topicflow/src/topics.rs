//! Topic and topic-list types plus the plain-text topic file format.
//!
//! One topic per line:
//!
//! ```text
//! [1] Trade (Count: 12): Mentions the exchange of capital, goods, and services
//! ```
//!
//! The level sits in brackets, the label carries no colon, and the
//! `(Count: n)` suffix is optional (absent means 0, the convention for seed
//! files and for freshly parsed model output).

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// A label/description pair at some hierarchy level, with the number of
/// times generation has produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub level: u32,
    pub label: String,
    pub description: String,
    pub count: u64,
}

impl Topic {
    /// Validated constructor: label and description must be nonempty after
    /// trimming and the label may not contain a colon (it would break the
    /// line format).
    pub fn new(
        level: u32,
        label: impl Into<String>,
        description: impl Into<String>,
    ) -> Result<Self, TopicError> {
        let label = label.into().trim().to_string();
        let description = description.into().trim().to_string();
        if level == 0 {
            return Err(TopicError::InvalidLevel);
        }
        if label.is_empty() {
            return Err(TopicError::EmptyLabel);
        }
        if label.contains(':') {
            return Err(TopicError::LabelContainsColon { label });
        }
        if description.is_empty() {
            return Err(TopicError::EmptyDescription { label });
        }
        Ok(Self {
            level,
            label,
            description,
            count: 0,
        })
    }

    pub fn with_count(mut self, count: u64) -> Self {
        self.count = count;
        self
    }

    /// `[level] Label: Description`, the form used inside prompts.
    pub fn prompt_line(&self) -> String {
        format!("[{}] {}: {}", self.level, self.label, self.description)
    }

    /// `[level] Label (Count: n): Description`, the persisted form.
    pub fn file_line(&self) -> String {
        format!(
            "[{}] {} (Count: {}): {}",
            self.level, self.label, self.count, self.description
        )
    }
}

/// An ordered list of topics with case-insensitive label uniqueness per
/// level. Seed topics (human-written starters) are tracked so prompt
/// rendering can put them first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopicList {
    topics: Vec<Topic>,
    seed_keys: HashSet<(u32, String)>,
}

#[derive(Debug, thiserror::Error)]
pub enum TopicError {
    #[error("topic level must be at least 1")]
    InvalidLevel,
    #[error("topic label is empty")]
    EmptyLabel,
    #[error("topic label \"{label}\" contains a colon")]
    LabelContainsColon { label: String },
    #[error("topic \"{label}\" has an empty description")]
    EmptyDescription { label: String },
    #[error("duplicate topic label \"{label}\" at level {level}")]
    DuplicateLabel { label: String, level: u32 },
    #[error("{path}:{line}: unparseable topic line: {text}")]
    UnparseableLine {
        path: String,
        line: usize,
        text: String,
    },
    #[error("cannot read topic file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("topic file {path} contains no topics")]
    EmptyFile { path: String },
}

fn key(level: u32, label: &str) -> (u32, String) {
    (level, label.to_lowercase())
}

impl TopicList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from topics, enforcing label uniqueness.
    pub fn from_topics(topics: Vec<Topic>) -> Result<Self, TopicError> {
        let mut list = Self::new();
        for t in topics {
            list.push(t)?;
        }
        Ok(list)
    }

    /// Build from seed topics; every entry is marked as a seed.
    pub fn from_seeds(seeds: Vec<Topic>) -> Result<Self, TopicError> {
        let mut list = Self::from_topics(seeds)?;
        list.seed_keys = list
            .topics
            .iter()
            .map(|t| key(t.level, &t.label))
            .collect();
        Ok(list)
    }

    pub fn push(&mut self, topic: Topic) -> Result<(), TopicError> {
        self.insert_at(self.topics.len(), topic)
    }

    /// Insert at a position (clamped to the list length), enforcing the
    /// same uniqueness rule as [`TopicList::push`]. Lets a merge place its
    /// result where the first source used to sit.
    pub fn insert_at(&mut self, index: usize, topic: Topic) -> Result<(), TopicError> {
        if self.find_at(topic.level, &topic.label).is_some() {
            return Err(TopicError::DuplicateLabel {
                label: topic.label,
                level: topic.level,
            });
        }
        let index = index.min(self.topics.len());
        self.topics.insert(index, topic);
        Ok(())
    }

    /// Index of a topic by level and case-insensitive label.
    pub fn position(&self, level: u32, label: &str) -> Option<usize> {
        let needle = label.to_lowercase();
        self.topics
            .iter()
            .position(|t| t.level == level && t.label.to_lowercase() == needle)
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn seed_count(&self) -> usize {
        self.seed_keys.len()
    }

    pub fn is_seed(&self, topic: &Topic) -> bool {
        self.seed_keys.contains(&key(topic.level, &topic.label))
    }

    /// Case-insensitive lookup across all levels.
    pub fn find(&self, label: &str) -> Option<&Topic> {
        let needle = label.to_lowercase();
        self.topics.iter().find(|t| t.label.to_lowercase() == needle)
    }

    /// Case-insensitive lookup at one level.
    pub fn find_at(&self, level: u32, label: &str) -> Option<&Topic> {
        let needle = label.to_lowercase();
        self.topics
            .iter()
            .find(|t| t.level == level && t.label.to_lowercase() == needle)
    }

    /// Increment the generation count of an existing topic. Returns false
    /// when no topic with that label exists at the level.
    pub fn increment(&mut self, level: u32, label: &str) -> bool {
        let needle = label.to_lowercase();
        match self
            .topics
            .iter_mut()
            .find(|t| t.level == level && t.label.to_lowercase() == needle)
        {
            Some(t) => {
                t.count += 1;
                true
            }
            None => false,
        }
    }

    /// Remove and return a topic. Seed marking for the label is dropped.
    pub fn remove(&mut self, level: u32, label: &str) -> Option<Topic> {
        let needle = label.to_lowercase();
        let idx = self
            .topics
            .iter()
            .position(|t| t.level == level && t.label.to_lowercase() == needle)?;
        let topic = self.topics.remove(idx);
        self.seed_keys.remove(&key(level, &topic.label));
        Some(topic)
    }

    /// Topics in prompt order: seeds first (in insertion order), then the
    /// rest (in insertion order).
    pub fn prompt_order(&self) -> Vec<&Topic> {
        let (seeds, rest): (Vec<&Topic>, Vec<&Topic>) =
            self.topics.iter().partition(|t| self.is_seed(t));
        seeds.into_iter().chain(rest).collect()
    }

    /// The block of `[level] Label: Description` lines used in prompts.
    pub fn prompt_block(&self) -> String {
        self.prompt_order()
            .iter()
            .map(|t| t.prompt_line())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn total_count(&self) -> u64 {
        self.topics.iter().map(|t| t.count).sum()
    }
}

fn topic_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // Label may not contain a colon; the count suffix binds tighter
        // than the label so "Trade (Count: 3)" splits off the count.
        Regex::new(r"^\[(\d+)\]\s*([^:]+?)(?:\s*\(Count:\s*(\d+)\))?\s*:\s*(\S.*)$")
            .expect("topic line regex compiles")
    })
}

/// Parse one `[level] Label: Description` line, with an optional
/// `(Count: n)` suffix after the label. Returns None when the line does
/// not match the shape at all.
pub fn parse_topic_line(line: &str) -> Option<Result<Topic, TopicError>> {
    let caps = topic_line_re().captures(line.trim())?;
    let level: u32 = match caps[1].parse() {
        Ok(0) | Err(_) => return Some(Err(TopicError::InvalidLevel)),
        Ok(l) => l,
    };
    let count: u64 = caps
        .get(3)
        .map(|m| m.as_str().parse().unwrap_or(0))
        .unwrap_or(0);
    Some(Topic::new(level, &caps[2], &caps[4]).map(|t| t.with_count(count)))
}

/// Load a topic file; blank lines and `#` comments are skipped.
pub fn load_topic_file(path: &Path) -> Result<TopicList, TopicError> {
    let display = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|e| TopicError::Io {
        path: display.clone(),
        source: e,
    })?;
    let mut topics = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_topic_line(trimmed) {
            Some(Ok(topic)) => topics.push(topic),
            Some(Err(e)) => return Err(e),
            None => {
                return Err(TopicError::UnparseableLine {
                    path: display,
                    line: idx + 1,
                    text: trimmed.to_string(),
                })
            }
        }
    }
    if topics.is_empty() {
        return Err(TopicError::EmptyFile { path: display });
    }
    TopicList::from_topics(topics)
}

/// Load a topic file and mark every entry as a seed.
pub fn load_seed_file(path: &Path) -> Result<TopicList, TopicError> {
    let list = load_topic_file(path)?;
    TopicList::from_seeds(list.topics.into_iter().collect())
}

/// Persist a topic list with counts, one line per topic in list order.
pub fn save_topic_file(path: &Path, list: &TopicList) -> Result<(), TopicError> {
    let mut out = String::new();
    for t in list.topics() {
        out.push_str(&t.file_line());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| TopicError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
