//! Deterministic mock providers for offline runs and tests.
//!
//! [`MockChat`] resolves a request in three tiers:
//!
//! 1. an ordered script (FIFO queue of replies and failures), then
//! 2. keyed rules matched against the prompt (first match wins), then
//! 3. a fallback synthesizer.
//!
//! The script drives scenario tests (retry sequences, self-correction);
//! rules drive end-to-end fixtures where different stages need different
//! answers; the hash fallback gives bulk tests distinct, reproducible
//! topics with no setup. Every request is captured for assertions.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{
    request_fingerprint, ChatProvider, CompletionRequest, EmbeddingProvider, ProviderError,
    RawCompletion,
};

/// Token usage estimated from character counts, the mock convention.
fn char_estimated(request: &CompletionRequest, text: String) -> RawCompletion {
    RawCompletion {
        prompt_tokens: request.prompt.chars().count().div_ceil(4) as u64,
        completion_tokens: text.chars().count().div_ceil(4) as u64,
        text,
        meta: Default::default(),
    }
}

/// Scriptable failure kinds, mapped onto the provider error taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockFailure {
    Transport,
    RateLimited,
    Auth,
    ContextLength,
}

impl MockFailure {
    fn to_error(self) -> ProviderError {
        match self {
            MockFailure::Transport => ProviderError::Transport("scripted".into()),
            MockFailure::RateLimited => ProviderError::RateLimited("scripted".into()),
            MockFailure::Auth => ProviderError::Auth("scripted".into()),
            MockFailure::ContextLength => ProviderError::ContextLength("scripted".into()),
        }
    }
}

/// How a keyed rule recognizes its request.
#[derive(Debug, Clone)]
pub enum Matcher {
    /// Substring of the prompt. Prompts from different stages share the
    /// document text, so pair this with a model filter when stages use
    /// distinct models.
    Contains(String),
    /// Exact request fingerprint (see [`request_fingerprint`]).
    Fingerprint(String),
}

#[derive(Debug, Clone)]
pub struct MockRule {
    matcher: Matcher,
    model: Option<String>,
    reply: String,
}

impl MockRule {
    pub fn when_contains(needle: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Contains(needle.into()),
            model: None,
            reply: reply.into(),
        }
    }

    pub fn when_fingerprint(fingerprint: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Fingerprint(fingerprint.into()),
            model: None,
            reply: reply.into(),
        }
    }

    /// Restrict the rule to one model id.
    pub fn for_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    fn matches(&self, request: &CompletionRequest) -> bool {
        if let Some(model) = &self.model {
            if *model != request.model {
                return false;
            }
        }
        match &self.matcher {
            Matcher::Contains(needle) => request.prompt.contains(needle),
            Matcher::Fingerprint(fp) => *fp == request_fingerprint(request),
        }
    }
}

/// What [`MockChat`] does when script and rules are silent.
#[derive(Debug, Clone, Default)]
pub enum Fallback {
    /// Fail with [`ProviderError::ScriptExhausted`].
    #[default]
    None,
    /// Always this text.
    Fixed(String),
    /// A synthetic topic line derived from the request fingerprint:
    /// identical requests get identical topics.
    HashTopic,
}

impl Fallback {
    pub fn fixed(text: impl Into<String>) -> Self {
        Fallback::Fixed(text.into())
    }
}

type ScriptItem = Result<String, MockFailure>;

#[derive(Default)]
pub struct MockChat {
    script: Mutex<VecDeque<ScriptItem>>,
    rules: Vec<MockRule>,
    fallback: Fallback,
    calls: Mutex<Vec<CompletionRequest>>,
}

impl MockChat {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queue replies consumed in order, ahead of rules and fallback.
    pub fn with_script<I, S>(self, replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for r in replies {
            self.push_reply(r);
        }
        self
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_fallback(mut self, fallback: Fallback) -> Self {
        self.fallback = fallback;
        self
    }

    /// Append one scripted reply (usable after the mock is shared).
    pub fn push_reply(&self, text: impl Into<String>) {
        self.script
            .lock()
            .expect("script lock")
            .push_back(Ok(text.into()));
    }

    /// Append one scripted failure.
    pub fn push_failure(&self, failure: MockFailure) {
        self.script
            .lock()
            .expect("script lock")
            .push_back(Err(failure));
    }

    pub fn remaining_script(&self) -> usize {
        self.script.lock().expect("script lock").len()
    }

    /// Every request seen so far, in arrival order.
    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.calls.lock().expect("calls lock").clone()
    }

    fn reply(request: &CompletionRequest, text: String) -> RawCompletion {
        char_estimated(request, text)
    }

    fn synthesize(request: &CompletionRequest) -> String {
        let fp = request_fingerprint(request);
        format!(
            "[1] Topic {}: Covers material in the document hashed to {}.",
            &fp[..6],
            &fp[..12]
        )
    }
}

impl ChatProvider for MockChat {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        self.calls.lock().expect("calls lock").push(request.clone());
        if let Some(item) = self.script.lock().expect("script lock").pop_front() {
            return match item {
                Ok(text) => Ok(Self::reply(request, text)),
                Err(failure) => Err(failure.to_error()),
            };
        }
        if let Some(rule) = self.rules.iter().find(|r| r.matches(request)) {
            return Ok(Self::reply(request, rule.reply.clone()));
        }
        match &self.fallback {
            Fallback::Fixed(text) => Ok(Self::reply(request, text.clone())),
            Fallback::HashTopic => Ok(Self::reply(request, Self::synthesize(request))),
            Fallback::None => Err(ProviderError::ScriptExhausted),
        }
    }
}

/// Pipeline stage recognized from marker lines in the bundled prompt
/// templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptStage {
    Generation,
    Merge,
    Assignment,
    Correction,
    Subtopics,
}

/// A stage-aware provider that answers every pipeline prompt with a valid,
/// deterministic response, so whole runs (generate, refine, assign,
/// hierarchy) work offline with no scripting.
///
/// Stage detection keys on instruction lines from the bundled templates;
/// custom templates must preserve those lines for this provider to work.
/// Synthesis routes each document to one of a small set of themes by
/// hashing the document text as it appears in the prompt (so identical
/// runs give byte-identical outputs):
///
/// * generation emits the document's theme as a single topic line;
/// * merge always answers "None";
/// * assignment and correction re-parse the topic list out of the prompt,
///   pick the document's theme when it is listed (hash-indexed fallback
///   otherwise), and quote the document's opening words;
/// * subtopic prompts get one second-level topic grounded in every
///   document of the chunk.
///
/// Because theme choice hashes the prompt-rendered text, truncation
/// changes the routing; disable truncation when a run must agree with
/// theme labels computed from full document texts.
pub struct PipelineMock {
    themes: Vec<(String, String)>,
    calls: AtomicUsize,
}

impl Default for PipelineMock {
    fn default() -> Self {
        Self::new()
    }
}

impl PipelineMock {
    pub fn new() -> Self {
        Self::with_themes(
            ["A", "B", "C"]
                .iter()
                .map(|k| {
                    (
                        format!("Theme {k}"),
                        format!("Groups documents the offline provider hashes to theme {k}."),
                    )
                })
                .collect(),
        )
    }

    /// Replace the theme vocabulary with (label, description) pairs.
    pub fn with_themes(themes: Vec<(String, String)>) -> Self {
        assert!(!themes.is_empty(), "pipeline mock needs at least one theme");
        Self {
            themes,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn themes(&self) -> &[(String, String)] {
        &self.themes
    }

    /// Number of completions served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Stable bucket of a document text among `n` choices: first eight
    /// bytes of sha256 over the trimmed text, little-endian, mod n.
    pub fn theme_index(text: &str, n: usize) -> usize {
        assert!(n >= 1, "theme_index needs at least one bucket");
        let digest = Sha256::digest(text.trim().as_bytes());
        let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        (h % n as u64) as usize
    }

    /// The theme label this provider routes a document text to.
    pub fn theme_label(&self, text: &str) -> &str {
        &self.themes[Self::theme_index(text, self.themes.len())].0
    }

    /// Which stage a prompt belongs to, by template marker line.
    pub fn detect_stage(prompt: &str) -> Option<PromptStage> {
        if prompt.contains("merge topics that are paraphrases or near duplicates") {
            Some(PromptStage::Merge)
        } else if prompt.contains("DO NOT add first- or third-level topics.") {
            Some(PromptStage::Subtopics)
        } else if prompt.contains("Error type:") && prompt.contains("[Topic list]") {
            Some(PromptStage::Correction)
        } else if prompt.contains("Double check that your assignment exists in the hierarchy!") {
            Some(PromptStage::Assignment)
        } else if prompt.contains("Please ONLY return the relevant or modified topics") {
            Some(PromptStage::Generation)
        } else {
            None
        }
    }

    /// Lines following the first line that equals `marker` (trimmed).
    fn lines_after<'a>(prompt: &'a str, marker: &str) -> Option<std::str::Lines<'a>> {
        let mut lines = prompt.lines();
        lines.by_ref().find(|l| l.trim() == marker)?;
        Some(lines)
    }

    /// The document text substituted into the prompt: everything after the
    /// `[Document]` line up to the trailing instruction lines.
    fn document_section(prompt: &str) -> Option<String> {
        let lines = Self::lines_after(prompt, "[Document]")?;
        let body: Vec<&str> = lines
            .take_while(|l| {
                let t = l.trim();
                t != "[Your response]"
                    && !t.starts_with("Please ONLY")
                    && !t.starts_with("Double check")
                    && !t.starts_with("Respond in the format")
            })
            .collect();
        let text = body.join("\n").trim().to_string();
        (!text.is_empty()).then_some(text)
    }

    /// Topic lines following a section marker, stopping at the first line
    /// that is not a topic line.
    fn topic_candidates(prompt: &str, marker: &str) -> Vec<crate::topics::Topic> {
        let Some(lines) = Self::lines_after(prompt, marker) else {
            return Vec::new();
        };
        lines
            .map_while(|l| match crate::topics::parse_topic_line(l) {
                Some(Ok(t)) => Some(t),
                _ => None,
            })
            .collect()
    }

    fn answer_generation(&self, prompt: &str) -> Result<String, ProviderError> {
        let doc = Self::document_section(prompt).ok_or_else(|| {
            ProviderError::Malformed("pipeline mock: no [Document] section in prompt".into())
        })?;
        let (label, description) = &self.themes[Self::theme_index(&doc, self.themes.len())];
        Ok(format!("[1] {label}: {description}"))
    }

    fn answer_assignment(&self, prompt: &str, marker: &str) -> Result<String, ProviderError> {
        let topics = Self::topic_candidates(prompt, marker);
        if topics.is_empty() {
            return Err(ProviderError::Malformed(format!(
                "pipeline mock: no topic lines after {marker:?} in prompt"
            )));
        }
        let doc = Self::document_section(prompt).ok_or_else(|| {
            ProviderError::Malformed("pipeline mock: no [Document] section in prompt".into())
        })?;
        let wanted = self.theme_label(&doc);
        let topic = topics
            .iter()
            .find(|t| t.label.eq_ignore_ascii_case(wanted))
            .unwrap_or(&topics[Self::theme_index(&doc, topics.len())]);
        let quote: Vec<&str> = doc.split_whitespace().take(8).collect();
        Ok(format!(
            "[{}] {}: Matches this theme per the document's opening words (\"{}\")",
            topic.level,
            topic.label,
            quote.join(" ")
        ))
    }

    fn answer_subtopics(prompt: &str) -> Result<String, ProviderError> {
        let parent = Self::lines_after(prompt, "[Topic branch]")
            .and_then(|mut lines| lines.find(|l| !l.trim().is_empty()))
            .and_then(|l| l.trim().strip_prefix("[1]"))
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .ok_or_else(|| {
                ProviderError::Malformed(
                    "pipeline mock: no [1] parent line after [Topic branch]".into(),
                )
            })?;
        // Chunk size = highest "Document N:" header in the documents section.
        let header = Regex::new(r"^Document (\d+):$").expect("header regex compiles");
        let count = Self::lines_after(prompt, "[Documents]")
            .into_iter()
            .flatten()
            .take_while(|l| l.trim() != "DO NOT add first- or third-level topics.")
            .filter_map(|l| header.captures(l.trim()))
            .filter_map(|c| c[1].parse::<usize>().ok())
            .max()
            .ok_or_else(|| {
                ProviderError::Malformed(
                    "pipeline mock: no Document headers after [Documents]".into(),
                )
            })?;
        let cites: Vec<String> = (1..=count).map(|i| i.to_string()).collect();
        Ok(format!(
            "[1] {parent}\n  [2] {parent} Aspects (Document: {}): Collects specific treatments of {} in the cited documents.",
            cites.join(", "),
            parent.to_lowercase()
        ))
    }
}

impl ChatProvider for PipelineMock {
    fn name(&self) -> &str {
        "pipeline-mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = match Self::detect_stage(&request.prompt) {
            Some(PromptStage::Merge) => "None".to_string(),
            Some(PromptStage::Generation) => self.answer_generation(&request.prompt)?,
            Some(PromptStage::Assignment) => {
                self.answer_assignment(&request.prompt, "Here is the topic hierarchy:")?
            }
            Some(PromptStage::Correction) => {
                self.answer_assignment(&request.prompt, "[Topic list]")?
            }
            Some(PromptStage::Subtopics) => Self::answer_subtopics(&request.prompt)?,
            None => return Err(ProviderError::ScriptExhausted),
        };
        Ok(char_estimated(request, text))
    }
}

/// Deterministic embedder: preset vectors for known texts or labels, a
/// hash-seeded unit vector otherwise.
pub struct MockEmbedder {
    dim: usize,
    presets: HashMap<String, Vec<f64>>,
    label_presets: HashMap<String, Vec<f64>>,
}

impl MockEmbedder {
    /// All texts map to hash-seeded unit vectors of the given dimension.
    pub fn hashed(dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be at least 1");
        Self {
            dim,
            presets: HashMap::new(),
            label_presets: HashMap::new(),
        }
    }

    /// Exact-text preset.
    pub fn with_preset(mut self, text: impl Into<String>, vector: Vec<f64>) -> Self {
        assert_eq!(vector.len(), self.dim, "preset dimension mismatch");
        self.presets.insert(text.into(), vector);
        self
    }

    /// Preset keyed by the label part of a "Label: description" text
    /// (case-insensitive), so topic fixtures need not spell out whole
    /// embedding inputs.
    pub fn with_label_preset(mut self, label: impl Into<String>, vector: Vec<f64>) -> Self {
        assert_eq!(vector.len(), self.dim, "preset dimension mismatch");
        self.label_presets
            .insert(label.into().trim().to_lowercase(), vector);
        self
    }

    fn hashed_vector(&self, text: &str) -> Vec<f64> {
        let digest = Sha256::digest(text.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }

    fn vector_for(&self, text: &str) -> Vec<f64> {
        if let Some(v) = self.presets.get(text) {
            return v.clone();
        }
        if let Some(label) = text.split(':').next() {
            if let Some(v) = self.label_presets.get(&label.trim().to_lowercase()) {
                return v.clone();
            }
        }
        self.hashed_vector(text)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn name(&self) -> &str {
        "mock-embedder"
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

/// Wrapper that tracks concurrent calls; verifies the gateway's
/// max_inflight bound.
pub struct CountingChat {
    inner: Arc<dyn ChatProvider>,
    current: AtomicUsize,
    peak: AtomicUsize,
    hold: Duration,
}

impl CountingChat {
    pub fn new(inner: Arc<dyn ChatProvider>, hold: Duration) -> Self {
        Self {
            inner,
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            hold,
        }
    }

    /// Highest number of simultaneously outstanding calls observed.
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl ChatProvider for CountingChat {
    fn name(&self) -> &str {
        "counting"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(self.hold);
        let result = self.inner.complete(request);
        self.current.fetch_sub(1, Ordering::SeqCst);
        result
    }
}
