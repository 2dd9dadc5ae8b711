//! Document-to-topic assignment with verifiable quotes.
//!
//! Each document is prompted against the full topic list and must come
//! back with a topic label, a document-specific description, and a quote
//! copied from the document. Everything the model claims is checked:
//! labels must exist in the list (else a hallucination), quotes must
//! survive normalized substring search against the document (else the
//! quote is rejected). Failed checks feed a self-correction loop that
//! re-prompts with the error kind stated and the topic list reshuffled
//! under a derived seed, up to a retry limit (default 10).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Document, TokenEstimator};
use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::prompts::{PromptError, PromptTemplate};
use crate::topics::{Topic, TopicList};

/// One topic the model attached to a document, with its evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub label: String,
    pub description: String,
    pub quote: String,
}

/// A validated assignment for one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub doc_id: String,
    pub entries: Vec<AssignmentEntry>,
    /// Prompt attempts spent, counting the successful one.
    pub attempts: u32,
    /// Model text the entries were parsed from (empty when loaded from
    /// a file, which stores only the validated entries).
    pub raw_response: String,
}

/// Why an attempt (or a whole document) was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorKind {
    /// Topic label not present in the topic list.
    Hallucination,
    /// "None", "Error", or an otherwise contentless response.
    InvalidResponse,
    /// Response text does not follow the output format.
    FormatError,
    /// Supporting quote absent from the document (or missing entirely).
    QuoteNotFound,
    /// Correction loop gave up; terminal.
    RetryExhausted,
}

impl ErrorKind {
    pub fn is_retryable(self) -> bool {
        !matches!(self, ErrorKind::RetryExhausted)
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Hallucination => "Hallucination",
            ErrorKind::InvalidResponse => "InvalidResponse",
            ErrorKind::FormatError => "FormatError",
            ErrorKind::QuoteNotFound => "QuoteNotFound",
            ErrorKind::RetryExhausted => "RetryExhausted",
        }
    }
}

impl std::fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A typed rejection: the kind drives retry eligibility and the
/// correction prompt; the detail is for humans and logs.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind}: {detail}")]
pub struct AssignmentFailure {
    pub kind: ErrorKind,
    pub detail: String,
}

impl AssignmentFailure {
    fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AssignmentError {
    #[error("topic list is empty; refine or load topics first")]
    EmptyTopicList,
    #[error("document {0} has no text to assign")]
    EmptyDocument(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] PromptError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: not a valid assignment record")]
    MalformedRecord { path: String, line: usize },
}

/// Whether a document takes one topic or several.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignMode {
    Single,
    Multi,
}

/// Collapse all whitespace runs to single spaces and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Split a quote on its ellipses ("..." or "…") and normalize each
/// piece. Boundary ellipses vanish (their side is empty); internal ones
/// partition the quote into fragments that must each match.
pub fn quote_fragments(quote: &str) -> Vec<String> {
    quote
        .replace('…', "...")
        .split("...")
        .map(normalize_whitespace)
        .filter(|fragment| !fragment.is_empty())
        .collect()
}

/// Case-sensitive check that every fragment of the quote occurs in the
/// document, in order, after whitespace normalization on both sides. A
/// quote that is nothing but ellipses verifies against nothing.
pub fn verify_quote(quote: &str, document: &str) -> bool {
    let fragments = quote_fragments(quote);
    if fragments.is_empty() {
        return false;
    }
    let haystack = normalize_whitespace(document);
    let mut cursor = 0;
    for fragment in &fragments {
        match haystack[cursor..].find(fragment.as_str()) {
            Some(offset) => cursor += offset + fragment.len(),
            None => return false,
        }
    }
    true
}

fn entry_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\[(\d+)\]\s*([^:]+?)\s*:\s*(.*)$").expect("entry line regex compiles")
    })
}

fn bare_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\[(\d+)\]\s*([^:()]+?)\s*$").expect("bare label regex compiles")
    })
}

fn trailing_quote_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"^(.*?)\s*\(\s*"(.*)"\s*\)\s*$"#).expect("trailing quote regex compiles")
    })
}

#[derive(Debug)]
struct ParsedLine {
    level: u32,
    label: String,
    description: String,
    quote: Option<String>,
}

/// Parse and validate an assignment response against the topic list and
/// the document.
///
/// Accepted line shape is `[<level>] <Label>: <description> ("<quote>")`.
/// Hierarchy paths (a bare parent line, then a deeper line) collapse to
/// their deepest entry. A whole-response "None" or "Error" is an
/// InvalidResponse; unparseable responses are FormatErrors; labels
/// missing from the list are Hallucinations; quotes that fail
/// verification (or were never given) are QuoteNotFound.
pub fn parse_assignment_response(
    text: &str,
    topics: &TopicList,
    doc: &Document,
) -> Result<Vec<AssignmentEntry>, AssignmentFailure> {
    let trimmed = text.trim();
    if trimmed.eq_ignore_ascii_case("none") || trimmed.eq_ignore_ascii_case("error") {
        return Err(AssignmentFailure::new(
            ErrorKind::InvalidResponse,
            format!("model declined to assign: {trimmed:?}"),
        ));
    }

    let mut lines: Vec<ParsedLine> = Vec::new();
    for line in trimmed.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = if let Some(caps) = entry_line_re().captures(line) {
            let body = caps[3].trim().to_string();
            let (description, quote) = match trailing_quote_re().captures(&body) {
                Some(q) => (q[1].trim().to_string(), Some(q[2].to_string())),
                None => (body, None),
            };
            ParsedLine {
                level: caps[1].parse().unwrap_or(1),
                label: caps[2].trim().to_string(),
                description,
                quote,
            }
        } else if let Some(caps) = bare_label_re().captures(line) {
            // Path context line: a label with no description.
            ParsedLine {
                level: caps[1].parse().unwrap_or(1),
                label: caps[2].trim().to_string(),
                description: String::new(),
                quote: None,
            }
        } else {
            log::warn!("skipping unparseable assignment line {line:?}");
            continue;
        };
        // A deeper line refines the one before it: keep the deepest.
        match lines.last() {
            Some(prev) if parsed.level > prev.level => {
                *lines.last_mut().expect("nonempty") = parsed;
            }
            _ => lines.push(parsed),
        }
    }

    if lines.is_empty() {
        return Err(AssignmentFailure::new(
            ErrorKind::FormatError,
            format!("no topic line found in response {trimmed:?}"),
        ));
    }

    let mut entries: Vec<AssignmentEntry> = Vec::new();
    for line in lines {
        // Keep the list's spelling, not the model's casing.
        let Some(label) = topics.find(&line.label).map(|t| t.label.clone()) else {
            return Err(AssignmentFailure::new(
                ErrorKind::Hallucination,
                format!("label {:?} is not in the topic list", line.label),
            ));
        };
        let line = ParsedLine { label, ..line };
        let Some(quote) = line.quote else {
            return Err(AssignmentFailure::new(
                ErrorKind::QuoteNotFound,
                format!("no supporting quote given for {:?}", line.label),
            ));
        };
        if !verify_quote(&quote, &doc.text) {
            return Err(AssignmentFailure::new(
                ErrorKind::QuoteNotFound,
                format!("quote {quote:?} does not appear in document {}", doc.id),
            ));
        }
        if entries
            .iter()
            .any(|e| e.label.to_lowercase() == line.label.to_lowercase())
        {
            continue;
        }
        entries.push(AssignmentEntry {
            label: line.label,
            description: line.description,
            quote,
        });
    }
    Ok(entries)
}

/// Settings for the assignment stage.
#[derive(Debug, Clone)]
pub struct AssignConfig {
    pub model: String,
    pub template: PromptTemplate,
    pub correction_template: PromptTemplate,
    pub mode: AssignMode,
    /// Total prompt attempts allowed per document.
    pub retry_limit: u32,
    /// Global seed the per-attempt shuffle seeds derive from.
    pub seed: u64,
    /// Document token budget for prompt rendering; quotes still verify
    /// against the full text. None sends documents untruncated.
    pub truncate_budget: Option<usize>,
    pub estimator: TokenEstimator,
    pub max_tokens: u32,
}

impl AssignConfig {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            template: crate::prompts::default_assignment_template(),
            correction_template: crate::prompts::default_correction_template(),
            mode: AssignMode::Single,
            retry_limit: 10,
            seed: 0,
            truncate_budget: None,
            estimator: TokenEstimator::default(),
            max_tokens: 300,
        }
    }
}

const SINGLE_MODE_INSTRUCTION: &str =
    "Assign exactly one topic: output a single topic line (with its path if the topic is not top-level).";

/// Render the first-attempt prompt: full topic list, document, and in
/// single mode an appended exactly-one-topic instruction.
pub fn render_assignment_prompt(
    topics: &TopicList,
    doc: &Document,
    mode: AssignMode,
    template: &PromptTemplate,
) -> Result<String, AssignmentError> {
    if doc.text.trim().is_empty() {
        return Err(AssignmentError::EmptyDocument(doc.id.clone()));
    }
    template.require(&["topics", "document"])?;
    let mut prompt = template.render(&[
        ("topics", topics.prompt_block().as_str()),
        ("document", doc.text.as_str()),
    ]);
    if mode == AssignMode::Single {
        prompt.push('\n');
        prompt.push_str(SINGLE_MODE_INSTRUCTION);
        prompt.push('\n');
    }
    Ok(prompt)
}

/// Render a correction prompt: states the prior error kind, then the
/// (already shuffled) topic list and the document.
pub fn render_correction_prompt(
    topics: &TopicList,
    doc: &Document,
    mode: AssignMode,
    template: &PromptTemplate,
    error: ErrorKind,
) -> Result<String, AssignmentError> {
    if doc.text.trim().is_empty() {
        return Err(AssignmentError::EmptyDocument(doc.id.clone()));
    }
    template.require(&["error_kind", "topics", "document"])?;
    let mut prompt = template.render(&[
        ("error_kind", error.name()),
        ("topics", topics.prompt_block().as_str()),
        ("document", doc.text.as_str()),
    ]);
    if mode == AssignMode::Single {
        prompt.push('\n');
        prompt.push_str(SINGLE_MODE_INSTRUCTION);
        prompt.push('\n');
    }
    Ok(prompt)
}

/// Seed for the attempt's topic shuffle, derived so that retries within
/// a document differ from each other but whole runs reproduce exactly.
pub fn shuffle_seed(global_seed: u64, doc_id: &str, attempt: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(doc_id.as_bytes());
    hasher.update(attempt.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"))
}

/// The topic list reordered under a seed, for correction prompts.
pub fn shuffled_topics(topics: &TopicList, seed: u64) -> TopicList {
    let mut reordered: Vec<Topic> = topics.topics().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reordered.shuffle(&mut rng);
    TopicList::from_topics(reordered).expect("reordering preserves validity")
}

/// Everything one document's correction loop produced: the assignment
/// (or the terminal exhaustion failure) and each rejected attempt.
#[derive(Debug)]
pub struct CorrectionOutcome {
    pub doc_id: String,
    pub outcome: Result<Assignment, AssignmentFailure>,
    /// One failure per rejected attempt, in attempt order.
    pub failures: Vec<AssignmentFailure>,
}

/// Prompt, validate, and retry with shuffled topics until the document
/// gets a valid assignment or the retry limit is spent.
///
/// Attempt 1 uses the assignment template and the list's own order;
/// later attempts use the correction template, name the prior error
/// kind, and shuffle the list under a seed derived from (global seed,
/// doc id, attempt). Gateway and template errors abort; validation
/// failures are what the loop absorbs.
pub fn assign_with_correction(
    doc: &Document,
    topics: &TopicList,
    gateway: &Gateway,
    config: &AssignConfig,
) -> Result<CorrectionOutcome, AssignmentError> {
    if topics.is_empty() {
        return Err(AssignmentError::EmptyTopicList);
    }
    assert!(config.retry_limit >= 1, "retry_limit must be at least 1");

    let prompt_doc = match config.truncate_budget {
        Some(budget) => config.estimator.truncate(doc, budget),
        None => doc.clone(),
    };

    let mut failures: Vec<AssignmentFailure> = Vec::new();
    for attempt in 1..=config.retry_limit {
        let prompt = if attempt == 1 {
            render_assignment_prompt(topics, &prompt_doc, config.mode, &config.template)?
        } else {
            let order = shuffled_topics(topics, shuffle_seed(config.seed, &doc.id, attempt));
            let last = failures.last().expect("retry implies a prior failure");
            render_correction_prompt(
                &order,
                &prompt_doc,
                config.mode,
                &config.correction_template,
                last.kind,
            )?
        };
        let request =
            CompletionRequest::new(&config.model, prompt).with_max_tokens(config.max_tokens);
        let response = gateway.complete(&request)?;

        // Quotes verify against the full document, not the truncation.
        match parse_assignment_response(&response.text, topics, doc) {
            Ok(entries) => {
                if config.mode == AssignMode::Single && entries.len() != 1 {
                    let failure = AssignmentFailure::new(
                        ErrorKind::InvalidResponse,
                        format!("single mode expects exactly one topic, got {}", entries.len()),
                    );
                    log::warn!("{}: attempt {attempt}: {failure}", doc.id);
                    failures.push(failure);
                    continue;
                }
                return Ok(CorrectionOutcome {
                    doc_id: doc.id.clone(),
                    outcome: Ok(Assignment {
                        doc_id: doc.id.clone(),
                        entries,
                        attempts: attempt,
                        raw_response: response.text,
                    }),
                    failures,
                });
            }
            Err(failure) => {
                log::warn!("{}: attempt {attempt}: {failure}", doc.id);
                failures.push(failure);
            }
        }
    }

    let last = failures.last().expect("limit >= 1 means one failure");
    let exhausted = AssignmentFailure::new(
        ErrorKind::RetryExhausted,
        format!(
            "gave up after {} attempts; last error was {last}",
            config.retry_limit
        ),
    );
    Ok(CorrectionOutcome {
        doc_id: doc.id.clone(),
        outcome: Err(exhausted),
        failures,
    })
}

/// An assignment run over a corpus: successes ordered by document id,
/// terminal failures likewise, and a tally of every rejection by kind
/// (retried ones included).
#[derive(Debug)]
pub struct AssignmentRun {
    pub assignments: Vec<Assignment>,
    pub exhausted: Vec<(String, AssignmentFailure)>,
    pub error_tallies: BTreeMap<String, u64>,
}

impl AssignmentRun {
    pub fn documents_processed(&self) -> usize {
        self.assignments.len() + self.exhausted.len()
    }
}

/// Assign every document in the corpus with bounded parallelism.
///
/// Documents are independent; `workers` threads pull from a shared
/// queue, and results are re-sorted by document id afterward so output
/// never depends on completion order. Individual retry exhaustion is
/// recorded and the run continues; infrastructure errors abort.
pub fn assign_corpus(
    corpus: &Corpus,
    topics: &TopicList,
    gateway: &Gateway,
    config: &AssignConfig,
    workers: usize,
) -> Result<AssignmentRun, AssignmentError> {
    if topics.is_empty() {
        return Err(AssignmentError::EmptyTopicList);
    }
    assert!(workers >= 1, "at least one worker required");

    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<CorrectionOutcome>> = Mutex::new(Vec::new());
    let abort: Mutex<Option<AssignmentError>> = Mutex::new(None);
    let docs = corpus.documents();

    thread::scope(|scope| {
        for _ in 0..workers.min(docs.len().max(1)) {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= docs.len() || abort.lock().expect("abort lock").is_some() {
                    break;
                }
                match assign_with_correction(&docs[index], topics, gateway, config) {
                    Ok(outcome) => outcomes.lock().expect("outcome lock").push(outcome),
                    Err(error) => {
                        *abort.lock().expect("abort lock") = Some(error);
                        break;
                    }
                }
            });
        }
    });

    if let Some(error) = abort.into_inner().expect("abort lock") {
        return Err(error);
    }

    let mut outcomes = outcomes.into_inner().expect("outcome lock");
    outcomes.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

    let mut run = AssignmentRun {
        assignments: Vec::new(),
        exhausted: Vec::new(),
        error_tallies: BTreeMap::new(),
    };
    for outcome in outcomes {
        for failure in &outcome.failures {
            *run.error_tallies
                .entry(failure.kind.name().to_string())
                .or_insert(0) += 1;
        }
        match outcome.outcome {
            Ok(assignment) => run.assignments.push(assignment),
            Err(failure) => {
                *run.error_tallies
                    .entry(failure.kind.name().to_string())
                    .or_insert(0) += 1;
                run.exhausted.push((outcome.doc_id, failure));
            }
        }
    }
    Ok(run)
}

#[derive(Serialize, Deserialize)]
struct AssignmentRecord {
    id: String,
    topics: Vec<AssignmentEntry>,
    attempts: u32,
}

#[derive(Serialize, Deserialize)]
struct SummaryRecord {
    summary: SummaryBody,
}

#[derive(Serialize, Deserialize)]
struct SummaryBody {
    documents: u64,
    assigned: u64,
    failed: u64,
    errors: BTreeMap<String, u64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FileLine {
    Record(AssignmentRecord),
    // Deserialized only to recognize and skip the trailing summary.
    Summary(#[allow(dead_code)] SummaryRecord),
}

/// Write one JSON record per assignment (ordered by document id) and a
/// trailing summary record with counts and per-kind error tallies.
pub fn write_assignments(path: &Path, run: &AssignmentRun) -> Result<(), AssignmentError> {
    let io_err = |e: std::io::Error| AssignmentError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut out = String::new();
    for assignment in &run.assignments {
        let record = AssignmentRecord {
            id: assignment.doc_id.clone(),
            topics: assignment.entries.clone(),
            attempts: assignment.attempts,
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    let summary = SummaryRecord {
        summary: SummaryBody {
            documents: run.documents_processed() as u64,
            assigned: run.assignments.len() as u64,
            failed: run.exhausted.len() as u64,
            errors: run.error_tallies.clone(),
        },
    };
    out.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
    out.push('\n');
    fs::write(path, out).map_err(io_err)
}

/// Read assignments back, skipping the summary record. Raw responses are
/// not persisted, so loaded assignments carry empty `raw_response`.
pub fn load_assignments(path: &Path) -> Result<Vec<Assignment>, AssignmentError> {
    let content = fs::read_to_string(path).map_err(|e| AssignmentError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut assignments = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<FileLine>(line) {
            Ok(FileLine::Record(record)) => assignments.push(Assignment {
                doc_id: record.id,
                entries: record.topics,
                attempts: record.attempts,
                raw_response: String::new(),
            }),
            Ok(FileLine::Summary(_)) => {}
            Err(_) => {
                return Err(AssignmentError::MalformedRecord {
                    path: path.display().to_string(),
                    line: idx + 1,
                })
            }
        }
    }
    Ok(assignments)
}
