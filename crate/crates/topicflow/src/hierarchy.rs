//! Two-level hierarchy construction: grounded subtopics under each
//! top-level topic.
//!
//! For every top-level topic, the documents assigned to it are packed
//! into prompt-sized chunks and fed to the model chunk by chunk. Each
//! prompt shows the branch so far (parent plus accumulated subtopics),
//! and responses cite the chunk-local document numbers that support
//! each proposed subtopic. Citations are checked, not trusted: a
//! subtopic citing a document outside its chunk is dropped with a
//! grounding error and never persisted, so every surviving subtopic is
//! backed by documents actually assigned to its parent.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::assignment::Assignment;
use crate::corpus::{Corpus, Document, TokenEstimator};
use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::prompts::{PromptError, PromptTemplate};
use crate::refinement::{self, RefineConfig, RefinementError, RelabelTarget};
use crate::topics::{parse_topic_line, Topic, TopicError, TopicList};

/// A second-level topic together with the ids of the documents that
/// support it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subtopic {
    pub topic: Topic,
    pub supporting: Vec<String>,
}

impl Subtopic {
    fn extend_grounding(&mut self, ids: impl IntoIterator<Item = String>) {
        for id in ids {
            if !self.supporting.contains(&id) {
                self.supporting.push(id);
            }
        }
        // Count mirrors the grounding-set size.
        self.topic.count = self.supporting.len() as u64;
    }
}

/// One top-level topic, its assigned documents, and its subtopics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicBranch {
    pub parent: Topic,
    /// Ids of the documents assigned to the parent.
    pub doc_ids: Vec<String>,
    /// Seed subtopics the branch started from, as provided.
    pub seed_subtopics: Vec<Topic>,
    /// Working subtopic set; starts as the seeds with empty grounding.
    pub subtopics: Vec<Subtopic>,
}

impl TopicBranch {
    pub fn new(parent: Topic, doc_ids: Vec<String>) -> Result<Self, HierarchyError> {
        if parent.level != 1 {
            return Err(HierarchyError::ParentNotTopLevel {
                label: parent.label,
                level: parent.level,
            });
        }
        Ok(Self {
            parent,
            doc_ids,
            seed_subtopics: Vec::new(),
            subtopics: Vec::new(),
        })
    }

    /// Attach seed subtopics; they enter the working set ungrounded.
    pub fn with_seed_subtopics(mut self, seeds: Vec<Topic>) -> Result<Self, HierarchyError> {
        for seed in &seeds {
            if seed.level != 2 {
                return Err(HierarchyError::SeedNotSecondLevel {
                    label: seed.label.clone(),
                    level: seed.level,
                });
            }
        }
        self.subtopics = seeds
            .iter()
            .map(|t| Subtopic {
                topic: t.clone().with_count(0),
                supporting: Vec::new(),
            })
            .collect();
        self.seed_subtopics = seeds;
        Ok(self)
    }

    pub fn find_subtopic(&self, label: &str) -> Option<&Subtopic> {
        self.subtopics
            .iter()
            .find(|s| s.topic.label.to_lowercase() == label.to_lowercase())
    }

    fn find_subtopic_mut(&mut self, label: &str) -> Option<&mut Subtopic> {
        self.subtopics
            .iter_mut()
            .find(|s| s.topic.label.to_lowercase() == label.to_lowercase())
    }

    /// The branch as shown in prompts: bare parent line, then one
    /// indented bare line per current subtopic.
    pub fn prompt_block(&self) -> String {
        let mut block = format!("[{}] {}", self.parent.level, self.parent.label);
        for sub in &self.subtopics {
            block.push_str(&format!("\n  [2] {}", sub.topic.label));
        }
        block
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HierarchyError {
    #[error("branch parent {label:?} must be level 1, got level {level}")]
    ParentNotTopLevel { label: String, level: u32 },
    #[error("seed subtopic {label:?} must be level 2, got level {level}")]
    SeedNotSecondLevel { label: String, level: u32 },
    #[error("branch {0:?} has no documents to draw subtopics from")]
    EmptyBranch(String),
    #[error("no subtopic or branch line parsed from response: {response:?}")]
    FormatError { response: String },
    #[error("subtopic {label:?} dropped: {detail}")]
    GroundingError { label: String, detail: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] PromptError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error(transparent)]
    Refinement(#[from] RefinementError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    BadHierarchyLine {
        path: String,
        line: usize,
        detail: String,
    },
}

/// Map each topic label to the ids of the documents assigned to it, in
/// assignment order. Multi-label documents appear under every label.
pub fn group_docs_by_topic(assignments: &[Assignment]) -> BTreeMap<String, Vec<String>> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for assignment in assignments {
        for entry in &assignment.entries {
            let ids = groups.entry(entry.label.clone()).or_default();
            if !ids.contains(&assignment.doc_id) {
                ids.push(assignment.doc_id.clone());
            }
        }
    }
    groups
}

/// Pack documents into chunks whose estimated token totals stay under
/// the budget, preserving document order. A document that alone exceeds
/// the budget gets its own chunk (and is truncated at prompt time).
pub fn pack_chunks<'a>(
    docs: &[&'a Document],
    estimator: &TokenEstimator,
    budget: usize,
) -> Vec<Vec<&'a Document>> {
    assert!(budget >= 1, "chunk budget must be at least 1");
    let mut chunks: Vec<Vec<&Document>> = Vec::new();
    let mut current: Vec<&Document> = Vec::new();
    let mut used = 0usize;
    for doc in docs {
        let cost = estimator.estimate(&doc.text);
        if !current.is_empty() && used + cost > budget {
            chunks.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(doc);
        used += cost;
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

fn subtopic_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\[(\d+)\]\s*([^:(]+?)\s*\(Document:\s*([^)]*)\)\s*:\s*(\S.*)$")
            .expect("subtopic line regex compiles")
    })
}

fn echo_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\[(\d+)\]\s*([^:(]+?)\s*(?::\s*(\S.*))?$")
            .expect("echo line regex compiles")
    })
}

/// A subtopic parsed from one chunk's response, with validated
/// chunk-local document indices (1-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSubtopic {
    pub label: String,
    pub description: String,
    pub doc_indices: Vec<usize>,
}

/// Parse one chunk response.
///
/// Returns the grounded subtopics plus the grounding errors for dropped
/// ones. Parent echo lines (`[1] …`) are fine and ignored; bare echoes
/// of already-known subtopics are no-ops; a new subtopic without any
/// in-range document citation is dropped with a grounding error. A
/// response in which nothing is recognizable is a format error, except
/// a plain "None" (no new subtopics).
pub fn parse_subtopics_response(
    text: &str,
    chunk_len: usize,
    known_labels: &[&str],
) -> Result<(Vec<ParsedSubtopic>, Vec<HierarchyError>), HierarchyError> {
    let trimmed = text.trim();
    if trimmed.eq_ignore_ascii_case("none") {
        return Ok((Vec::new(), Vec::new()));
    }

    let known = |label: &str| {
        known_labels
            .iter()
            .any(|k| k.to_lowercase() == label.to_lowercase())
    };

    let mut subtopics: Vec<ParsedSubtopic> = Vec::new();
    let mut dropped: Vec<HierarchyError> = Vec::new();
    let mut recognized = 0usize;

    for line in trimmed.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(caps) = subtopic_line_re().captures(line) {
            recognized += 1;
            let level: u32 = caps[1].parse().unwrap_or(0);
            let label = caps[2].trim().to_string();
            if level != 2 {
                log::warn!("skipping level-{level} line in subtopic response: {line:?}");
                continue;
            }
            let mut indices: Vec<usize> = Vec::new();
            let mut bad_index: Option<String> = None;
            for piece in caps[3].split(',') {
                let piece = piece.trim();
                if piece.is_empty() {
                    continue;
                }
                match piece.parse::<usize>() {
                    Ok(i) if (1..=chunk_len).contains(&i) => {
                        if !indices.contains(&i) {
                            indices.push(i);
                        }
                    }
                    Ok(i) => {
                        bad_index =
                            Some(format!("cites document {i} outside chunk of {chunk_len}"));
                        break;
                    }
                    Err(_) => {
                        bad_index = Some(format!("unparseable document citation {piece:?}"));
                        break;
                    }
                }
            }
            if let Some(detail) = bad_index {
                let error = HierarchyError::GroundingError {
                    label,
                    detail,
                };
                log::warn!("{error}");
                dropped.push(error);
                continue;
            }
            if indices.is_empty() {
                if known(&label) {
                    continue;
                }
                let error = HierarchyError::GroundingError {
                    label,
                    detail: "no supporting documents cited".to_string(),
                };
                log::warn!("{error}");
                dropped.push(error);
                continue;
            }
            subtopics.push(ParsedSubtopic {
                label,
                description: caps[4].trim().to_string(),
                doc_indices: indices,
            });
        } else if let Some(caps) = echo_line_re().captures(line) {
            recognized += 1;
            let level: u32 = caps[1].parse().unwrap_or(0);
            let label = caps[2].trim().to_string();
            if level == 2 && !known(&label) {
                let error = HierarchyError::GroundingError {
                    label,
                    detail: "no supporting documents cited".to_string(),
                };
                log::warn!("{error}");
                dropped.push(error);
            }
            // Level-1 echoes and known-subtopic echoes are no-ops.
        } else {
            log::warn!("skipping unparseable subtopic line {line:?}");
        }
    }

    if recognized == 0 {
        return Err(HierarchyError::FormatError {
            response: text.to_string(),
        });
    }
    Ok((subtopics, dropped))
}

/// Settings for the hierarchy stage.
#[derive(Debug, Clone)]
pub struct HierarchyConfig {
    pub model: String,
    pub template: PromptTemplate,
    /// Estimated-token budget per document chunk.
    pub chunk_budget: usize,
    pub estimator: TokenEstimator,
    pub max_tokens: u32,
}

impl HierarchyConfig {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            template: crate::prompts::default_subtopics_template(),
            chunk_budget: 2000,
            estimator: TokenEstimator::default(),
            max_tokens: 300,
        }
    }
}

/// One branch's generation outcome: the populated branch, how many
/// chunks ran, and the grounding errors for subtopics that were dropped.
#[derive(Debug)]
pub struct BranchRun {
    pub branch: TopicBranch,
    pub chunks: usize,
    pub grounding_errors: Vec<HierarchyError>,
}

/// Run the branch's documents through the model chunk by chunk,
/// accumulating grounded subtopics.
///
/// Chunks are strictly sequential: each prompt shows every subtopic
/// accumulated so far, so the subtopic set only grows. New labels are
/// added with their supporting ids; repeated labels (seeds included)
/// have their grounding extended instead of duplicating.
pub fn generate_subtopics(
    branch: TopicBranch,
    docs: &[&Document],
    gateway: &Gateway,
    config: &HierarchyConfig,
) -> Result<BranchRun, HierarchyError> {
    if docs.is_empty() {
        return Err(HierarchyError::EmptyBranch(branch.parent.label.clone()));
    }
    for doc in docs {
        assert!(
            branch.doc_ids.contains(&doc.id),
            "document {} is not in branch {:?}",
            doc.id,
            branch.parent.label
        );
    }
    config.template.require(&["topic_branch", "documents"])?;

    let mut branch = branch;
    let mut grounding_errors: Vec<HierarchyError> = Vec::new();
    let chunks = pack_chunks(docs, &config.estimator, config.chunk_budget);
    let chunk_count = chunks.len();

    for chunk in chunks {
        let mut documents = String::new();
        for (i, doc) in chunk.iter().enumerate() {
            // A lone oversized document is cut down to the chunk budget.
            let text = if chunk.len() == 1 {
                config.estimator.truncate(doc, config.chunk_budget).text
            } else {
                doc.text.clone()
            };
            if i > 0 {
                documents.push('\n');
            }
            documents.push_str(&format!("Document {}:\n{}\n", i + 1, text));
        }
        let prompt = config.template.render(&[
            ("topic_branch", branch.prompt_block().as_str()),
            ("documents", documents.as_str()),
        ]);
        let request =
            CompletionRequest::new(&config.model, prompt).with_max_tokens(config.max_tokens);
        let response = gateway.complete(&request)?;

        let known: Vec<String> = branch
            .subtopics
            .iter()
            .map(|s| s.topic.label.clone())
            .collect();
        let known_refs: Vec<&str> = known.iter().map(String::as_str).collect();
        let (parsed, dropped) =
            parse_subtopics_response(&response.text, chunk.len(), &known_refs)?;
        grounding_errors.extend(dropped);

        for sub in parsed {
            let ids: Vec<String> = sub
                .doc_indices
                .iter()
                .map(|i| chunk[i - 1].id.clone())
                .collect();
            match branch.find_subtopic_mut(&sub.label) {
                Some(existing) => existing.extend_grounding(ids),
                None => {
                    let topic = Topic::new(2, &sub.label, &sub.description)?;
                    let mut subtopic = Subtopic {
                        topic,
                        supporting: Vec::new(),
                    };
                    subtopic.extend_grounding(ids);
                    branch.subtopics.push(subtopic);
                }
            }
        }
    }

    Ok(BranchRun {
        branch,
        chunks: chunk_count,
        grounding_errors,
    })
}

/// A full hierarchy run: one branch per top-level topic that had
/// assigned documents, plus the labels skipped for want of documents.
#[derive(Debug)]
pub struct HierarchyRun {
    pub branches: Vec<BranchRun>,
    pub skipped: Vec<String>,
}

impl HierarchyRun {
    pub fn grounding_error_count(&self) -> usize {
        self.branches.iter().map(|b| b.grounding_errors.len()).sum()
    }

    pub fn branches_only(&self) -> Vec<&TopicBranch> {
        self.branches.iter().map(|b| &b.branch).collect()
    }
}

/// Build branches for every level-1 topic in list order and generate
/// subtopics for each from its assigned documents.
///
/// Topics with no assigned documents are skipped with a warning, as are
/// assignment labels that no longer match the (possibly hand-edited)
/// topic list. Branches run sequentially for reproducibility.
pub fn build_hierarchy(
    corpus: &Corpus,
    topics: &TopicList,
    assignments: &[Assignment],
    gateway: &Gateway,
    config: &HierarchyConfig,
    seeds: &BTreeMap<String, Vec<Topic>>,
) -> Result<HierarchyRun, HierarchyError> {
    let groups = group_docs_by_topic(assignments);
    for label in groups.keys() {
        if topics.find(label).is_none() {
            log::warn!("assignments mention {label:?}, which is not in the topic list; skipping");
        }
    }

    let mut run = HierarchyRun {
        branches: Vec::new(),
        skipped: Vec::new(),
    };
    for topic in topics.topics() {
        if topic.level != 1 {
            continue;
        }
        let Some(doc_ids) = groups.get(&topic.label) else {
            log::warn!("topic {:?} has no assigned documents; skipping", topic.label);
            run.skipped.push(topic.label.clone());
            continue;
        };
        let docs: Vec<&Document> = doc_ids
            .iter()
            .filter_map(|id| {
                let doc = corpus.get(id);
                if doc.is_none() {
                    log::warn!("assigned document {id:?} is not in the corpus; skipping");
                }
                doc
            })
            .collect();
        if docs.is_empty() {
            run.skipped.push(topic.label.clone());
            continue;
        }
        let mut branch = TopicBranch::new(topic.clone(), doc_ids.clone())?;
        if let Some(branch_seeds) = seeds.get(&topic.label) {
            branch = branch.with_seed_subtopics(branch_seeds.clone())?;
        }
        run.branches
            .push(generate_subtopics(branch, &docs, gateway, config)?);
    }
    Ok(run)
}

/// Merge and prune a branch's subtopics with the refinement machinery,
/// using grounding-set sizes as the counts. Groundings of merged
/// subtopics are unioned; pruned subtopics disappear.
pub fn refine_branch(
    branch: &TopicBranch,
    gateway: &Gateway,
    config: &RefineConfig,
) -> Result<TopicBranch, HierarchyError> {
    if branch.subtopics.len() < 2 {
        return Ok(branch.clone());
    }
    let list = TopicList::from_topics(
        branch
            .subtopics
            .iter()
            .map(|s| s.topic.clone().with_count(s.supporting.len() as u64))
            .collect(),
    )?;
    let outcome = refinement::refine_pass(&list, gateway, config)?;

    // Pour each original grounding into its surviving label.
    let mut grounding: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for sub in &branch.subtopics {
        match outcome.relabel.target_of(&sub.topic.label) {
            RelabelTarget::Renamed(target) => {
                let ids = grounding.entry(target.to_lowercase()).or_default();
                for id in &sub.supporting {
                    if !ids.contains(id) {
                        ids.push(id.clone());
                    }
                }
            }
            RelabelTarget::Removed => {}
        }
    }

    let mut refined = branch.clone();
    refined.subtopics = outcome
        .list
        .topics()
        .iter()
        .map(|t| {
            let supporting = grounding
                .get(&t.label.to_lowercase())
                .cloned()
                .unwrap_or_default();
            let count = supporting.len() as u64;
            Subtopic {
                topic: t.clone().with_count(count),
                supporting,
            }
        })
        .collect();
    Ok(refined)
}

fn hierarchy_subtopic_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\[2\]\s*([^:(]+?)\s*:\s*(.*?)(?:\s*\(docs:\s*([^)]*)\))?$")
            .expect("hierarchy subtopic regex compiles")
    })
}

/// Write branches as parent lines with indented subtopic lines:
/// `[1] Label (Count: n): Description` then
/// `  [2] Label: Description (docs: id, id)` per subtopic.
pub fn write_hierarchy(path: &Path, branches: &[&TopicBranch]) -> Result<(), HierarchyError> {
    let mut out = String::new();
    for branch in branches {
        out.push_str(&branch.parent.file_line());
        out.push('\n');
        for sub in &branch.subtopics {
            out.push_str(&format!(
                "  [2] {}: {}",
                sub.topic.label, sub.topic.description
            ));
            if !sub.supporting.is_empty() {
                out.push_str(&format!(" (docs: {})", sub.supporting.join(", ")));
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| HierarchyError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Read a hierarchy file back into branches. Documents sets are taken
/// from the subtopic groundings (the file does not store d_t itself).
pub fn load_hierarchy(path: &Path) -> Result<Vec<TopicBranch>, HierarchyError> {
    let content = fs::read_to_string(path).map_err(|e| HierarchyError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut branches: Vec<TopicBranch> = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let bad = |detail: &str| HierarchyError::BadHierarchyLine {
            path: path.display().to_string(),
            line: idx + 1,
            detail: detail.to_string(),
        };
        if raw.trim().is_empty() {
            continue;
        }
        let indented = raw.starts_with(' ') || raw.starts_with('\t');
        let line = raw.trim();
        if !indented {
            let topic = match parse_topic_line(line) {
                Some(Ok(t)) => t,
                Some(Err(e)) => return Err(bad(&e.to_string())),
                None => return Err(bad("expected a `[1] Label: Description` parent line")),
            };
            if topic.level != 1 {
                return Err(bad("parent lines must be level 1"));
            }
            branches.push(TopicBranch::new(topic, Vec::new())?);
        } else {
            let branch = branches
                .last_mut()
                .ok_or_else(|| bad("subtopic line before any parent line"))?;
            let caps = hierarchy_subtopic_re()
                .captures(line)
                .ok_or_else(|| bad("expected a `[2] Label: Description (docs: …)` line"))?;
            let supporting: Vec<String> = caps
                .get(3)
                .map(|m| {
                    m.as_str()
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                })
                .unwrap_or_default();
            let topic =
                Topic::new(2, &caps[1], &caps[2])?.with_count(supporting.len() as u64);
            for id in &supporting {
                if !branch.doc_ids.contains(id) {
                    branch.doc_ids.push(id.clone());
                }
            }
            branch.subtopics.push(Subtopic {
                topic,
                supporting,
            });
        }
    }
    Ok(branches)
}
