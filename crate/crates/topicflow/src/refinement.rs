//! Topic-list refinement: merge near-duplicates, then prune stragglers.
//!
//! Near-duplicate candidates are topic pairs whose embedding cosine
//! clears a threshold (default 0.5). Candidate pairs go to the model in
//! batches (default 5 pairs per prompt); the model answers with merge
//! directives naming a combined topic and its sources, or "None".
//! Directives are applied in order with transitive relabeling, counts
//! summing across sources, and a [`RelabelMap`] records every label that
//! changed or vanished so earlier artifacts can be remapped. Pruning
//! removes topics whose generation count never reached the removal
//! threshold; seeds get no exemption. The whole stage is optional.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::gateway::{cosine, CompletionRequest, Gateway, GatewayError};
use crate::prompts::{PromptError, PromptTemplate};
use crate::topics::{Topic, TopicError, TopicList};

/// One merge the model asked for: a combined topic replacing `sources`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeDirective {
    pub merged: Topic,
    pub sources: Vec<String>,
}

/// Where an original label ended up after refinement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelabelTarget {
    Renamed(String),
    Removed,
}

/// Accumulated old-label relocations, kept transitively closed: recording
/// B -> C after A -> B retargets A straight to C, so resolving any label
/// is a single lookup and cycles cannot form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelabelMap {
    entries: BTreeMap<String, RelabelTarget>,
}

pub const REMOVED_SENTINEL: &str = "REMOVED";

fn same_label(a: &str, b: &str) -> bool {
    a.to_lowercase() == b.to_lowercase()
}

impl RelabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record `old` merging into `new`, maintaining transitive closure.
    pub fn record(&mut self, old: &str, new: &str) {
        // Follow the new label through existing entries first.
        let target = match self.lookup(new) {
            Some(RelabelTarget::Renamed(t)) => t.clone(),
            _ => new.to_string(),
        };
        if same_label(old, &target) {
            return;
        }
        for entry in self.entries.values_mut() {
            if matches!(entry, RelabelTarget::Renamed(t) if same_label(t, old)) {
                *entry = RelabelTarget::Renamed(target.clone());
            }
        }
        self.entries
            .insert(old.to_string(), RelabelTarget::Renamed(target));
    }

    /// Record `label` as pruned; anything pointing at it is pruned too.
    pub fn mark_removed(&mut self, label: &str) {
        for entry in self.entries.values_mut() {
            if matches!(entry, RelabelTarget::Renamed(t) if same_label(t, label)) {
                *entry = RelabelTarget::Removed;
            }
        }
        self.entries
            .insert(label.to_string(), RelabelTarget::Removed);
    }

    fn lookup(&self, label: &str) -> Option<&RelabelTarget> {
        self.entries
            .iter()
            .find(|(k, _)| same_label(k, label))
            .map(|(_, v)| v)
    }

    /// Total map over labels: unchanged labels come back as themselves.
    pub fn target_of(&self, label: &str) -> RelabelTarget {
        match self.lookup(label) {
            Some(t) => t.clone(),
            None => RelabelTarget::Renamed(label.to_string()),
        }
    }

    /// Surviving label for `label`, or None if it was pruned.
    pub fn resolve(&self, label: &str) -> Option<String> {
        match self.target_of(label) {
            RelabelTarget::Renamed(t) => Some(t),
            RelabelTarget::Removed => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &RelabelTarget)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Two-column tab-separated persistence: old label, then the new
    /// label or the REMOVED sentinel. Sorted by old label.
    pub fn write_tsv(&self, path: &Path) -> Result<(), RefinementError> {
        let mut out = String::new();
        for (old, target) in &self.entries {
            let new = match target {
                RelabelTarget::Renamed(t) => t.as_str(),
                RelabelTarget::Removed => REMOVED_SENTINEL,
            };
            out.push_str(&format!("{old}\t{new}\n"));
        }
        fs::write(path, out).map_err(|e| RefinementError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load_tsv(path: &Path) -> Result<Self, RefinementError> {
        let content = fs::read_to_string(path).map_err(|e| RefinementError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut entries = BTreeMap::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (old, new) = line.split_once('\t').ok_or_else(|| RefinementError::BadMapLine {
                path: path.display().to_string(),
                line: idx + 1,
            })?;
            let target = if new == REMOVED_SENTINEL {
                RelabelTarget::Removed
            } else {
                RelabelTarget::Renamed(new.to_string())
            };
            entries.insert(old.to_string(), target);
        }
        Ok(Self { entries })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RefinementError {
    #[error("refinement needs at least 2 topics, got {0}")]
    TooFewTopics(usize),
    #[error("similarity threshold {0} outside [-1, 1]")]
    ThresholdOutOfRange(f64),
    #[error("no merge directive parsed from response: {response:?}")]
    FormatError { response: String },
    #[error("pruning at threshold {threshold} removed every topic")]
    AllPruned { threshold: u64 },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] PromptError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: relabel map line is not two tab-separated columns")]
    BadMapLine { path: String, line: usize },
}

/// Embed every topic as "Label: description" and return all unordered
/// pairs with cosine at or above the threshold, most similar first.
pub fn similar_pairs(
    topics: &TopicList,
    gateway: &Gateway,
    embed_model: &str,
    threshold: f64,
) -> Result<Vec<(String, String, f64)>, RefinementError> {
    if topics.len() < 2 {
        return Err(RefinementError::TooFewTopics(topics.len()));
    }
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(RefinementError::ThresholdOutOfRange(threshold));
    }
    let texts: Vec<String> = topics
        .topics()
        .iter()
        .map(|t| format!("{}: {}", t.label, t.description))
        .collect();
    let vectors = gateway.embed(embed_model, &texts)?;

    let mut pairs = Vec::new();
    for i in 0..topics.len() {
        for j in (i + 1)..topics.len() {
            let sim = cosine(&vectors[i].values, &vectors[j].values);
            if sim >= threshold {
                pairs.push((
                    topics.topics()[i].label.clone(),
                    topics.topics()[j].label.clone(),
                    sim,
                ));
            }
        }
    }
    // Descending similarity; enumeration order breaks ties (stable sort).
    pairs.sort_by(|a, b| b.2.partial_cmp(&a.2).expect("finite cosines"));
    Ok(pairs)
}

fn merge_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // The final parenthetical carries the sources; the description may
        // contain its own parentheses earlier.
        Regex::new(r"^\[(\d+)\]\s*([^:]+?)\s*:\s*(.+?)\s*\(([^()]*)\)$")
            .expect("merge line regex compiles")
    })
}

fn source_prefix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\[\d+\]\s*").expect("source prefix regex compiles"))
}

/// Parse one merge response. "None" (alone, case-insensitive) yields no
/// directives. Lines shaped `[level] Label: Description (src, src, ...)`
/// become directives; other lines are skipped with a warning; if nothing
/// parses the response is a FormatError.
pub fn parse_merge_response(text: &str) -> Result<Vec<MergeDirective>, RefinementError> {
    let trimmed = text.trim();
    if trimmed.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut directives = Vec::new();
    for line in trimmed.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(caps) = merge_line_re().captures(line) else {
            log::warn!("skipping non-directive line {line:?}");
            continue;
        };
        let level: u32 = match caps[1].parse() {
            Ok(l) if l >= 1 => l,
            _ => {
                log::warn!("skipping directive with bad level: {line:?}");
                continue;
            }
        };
        let sources: Vec<String> = caps[4]
            .split(',')
            .map(|s| source_prefix_re().replace(s.trim(), "").to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if sources.len() < 2 {
            log::warn!("skipping directive with fewer than 2 sources: {line:?}");
            continue;
        }
        match Topic::new(level, &caps[2], &caps[3]) {
            Ok(merged) => directives.push(MergeDirective { merged, sources }),
            Err(e) => log::warn!("skipping directive with invalid topic: {e}"),
        }
    }
    if directives.is_empty() {
        return Err(RefinementError::FormatError {
            response: text.to_string(),
        });
    }
    Ok(directives)
}

#[derive(Debug, Clone)]
pub struct MergeConfig {
    pub model: String,
    pub template: PromptTemplate,
    pub batch_size: usize,
    pub max_tokens: u32,
}

impl MergeConfig {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            template: crate::prompts::default_merge_template(),
            batch_size: 5,
            max_tokens: 300,
        }
    }
}

/// Send candidate pairs to the model in batches and collect validated
/// merge directives.
///
/// Validation drops (with a warning) any directive citing a label absent
/// from the list (hallucinated) or mixing levels; surviving directives
/// are returned in batch order.
pub fn merge_round(
    pairs: &[(String, String, f64)],
    topics: &TopicList,
    gateway: &Gateway,
    config: &MergeConfig,
) -> Result<Vec<MergeDirective>, RefinementError> {
    assert!(config.batch_size >= 1, "batch_size must be at least 1");
    config.template.require(&["topics"])?;
    let mut directives = Vec::new();
    for batch in pairs.chunks(config.batch_size) {
        // List each topic involved in the batch once, in first-appearance
        // order.
        let mut lines: Vec<String> = Vec::new();
        let mut seen: Vec<String> = Vec::new();
        for (a, b, _) in batch {
            for label in [a, b] {
                if seen.iter().any(|s| same_label(s, label)) {
                    continue;
                }
                seen.push(label.clone());
                if let Some(t) = topics.find(label) {
                    lines.push(t.prompt_line());
                }
            }
        }
        let prompt = config.template.render(&[("topics", lines.join("\n").as_str())]);
        let request =
            CompletionRequest::new(&config.model, prompt).with_max_tokens(config.max_tokens);
        let response = gateway.complete(&request)?;
        let parsed = match parse_merge_response(&response.text) {
            Ok(d) => d,
            Err(RefinementError::FormatError { response }) => {
                return Err(RefinementError::FormatError { response })
            }
            Err(other) => return Err(other),
        };
        for directive in parsed {
            if let Some(valid) = validate_directive(directive, topics) {
                directives.push(valid);
            }
        }
    }
    Ok(directives)
}

/// Membership and level checks for one directive; None means dropped.
fn validate_directive(directive: MergeDirective, topics: &TopicList) -> Option<MergeDirective> {
    let level = directive.merged.level;
    for source in &directive.sources {
        match topics.find(source) {
            None => {
                log::warn!(
                    "dropping merge into \"{}\": source \"{source}\" not in the topic list",
                    directive.merged.label
                );
                return None;
            }
            Some(t) if t.level != level => {
                log::warn!(
                    "dropping merge into \"{}\": source \"{source}\" is level {}, directive is level {level}",
                    directive.merged.label,
                    t.level
                );
                return None;
            }
            Some(_) => {}
        }
    }
    Some(directive)
}

/// Apply directives in order, producing the merged list and the relabel
/// map.
///
/// Each directive removes its sources and inserts the merged topic where
/// the first source sat, with count equal to the sum of source counts.
/// Later directives may cite labels earlier ones consumed; those resolve
/// through the map first (transitive relabeling). If the merged label
/// already exists, the existing topic absorbs the counts instead of a
/// duplicate appearing.
pub fn apply_merges(
    topics: &TopicList,
    directives: &[MergeDirective],
) -> (TopicList, RelabelMap) {
    let mut list = topics.clone();
    let mut map = RelabelMap::new();

    for directive in directives {
        let level = directive.merged.level;
        // Resolve sources through earlier merges, dedupe, drop vanished.
        let mut resolved: Vec<String> = Vec::new();
        for source in &directive.sources {
            match map.resolve(source) {
                Some(label) => {
                    if !resolved.iter().any(|r| same_label(r, &label)) {
                        resolved.push(label);
                    }
                }
                None => log::warn!("merge source \"{source}\" was already pruned"),
            }
        }
        resolved.retain(|label| {
            if list.find_at(level, label).is_some() {
                true
            } else {
                log::warn!("merge source \"{label}\" not present at level {level}, skipping");
                false
            }
        });
        if resolved.is_empty() {
            continue;
        }

        let first_position = resolved
            .iter()
            .filter_map(|label| list.position(level, label))
            .min()
            .expect("resolved sources exist");
        let mut merged_count = 0;
        let mut removed_labels = Vec::new();
        for label in &resolved {
            // A source spelled like the merged label keeps its identity;
            // its count still participates in the sum.
            let topic = list.remove(level, label).expect("source present");
            merged_count += topic.count;
            removed_labels.push(topic.label);
        }

        if let Some(existing) = list.find_at(level, &directive.merged.label) {
            // Collision with an uninvolved topic: absorb counts into it.
            let target = existing.label.clone();
            for _ in 0..merged_count {
                list.increment(level, &target);
            }
            for old in &removed_labels {
                map.record(old, &target);
            }
        } else {
            let merged = directive.merged.clone().with_count(merged_count);
            let target = merged.label.clone();
            list.insert_at(first_position, merged)
                .expect("absence checked above");
            for old in &removed_labels {
                map.record(old, &target);
            }
        }
    }
    (list, map)
}

/// Drop topics whose count is below the threshold. Seeds are not exempt.
pub fn prune_infrequent(topics: &TopicList, threshold: u64) -> Result<TopicList, RefinementError> {
    let survivors: Vec<Topic> = topics
        .topics()
        .iter()
        .filter(|t| t.count >= threshold)
        .cloned()
        .collect();
    if survivors.is_empty() {
        return Err(RefinementError::AllPruned { threshold });
    }
    Ok(TopicList::from_topics(survivors).expect("subset of a valid list"))
}

#[derive(Debug, Clone)]
pub struct RefineConfig {
    pub chat_model: String,
    pub embed_model: String,
    pub template: PromptTemplate,
    pub similarity_threshold: f64,
    pub merge_batch_size: usize,
    pub prune_threshold: u64,
    /// Pair-merge rounds to run; merged topics can create new
    /// near-duplicates, so more than one round may help.
    pub iterations: usize,
    pub max_tokens: u32,
}

impl RefineConfig {
    pub fn new(chat_model: impl Into<String>, embed_model: impl Into<String>) -> Self {
        Self {
            chat_model: chat_model.into(),
            embed_model: embed_model.into(),
            template: crate::prompts::default_merge_template(),
            similarity_threshold: 0.5,
            merge_batch_size: 5,
            prune_threshold: 10,
            iterations: 1,
            max_tokens: 300,
        }
    }
}

/// Result of a full refinement pass.
#[derive(Debug)]
pub struct RefineOutcome {
    pub list: TopicList,
    pub relabel: RelabelMap,
    /// Merge rounds that actually ran (a round with no candidate pairs or
    /// no directives ends the loop early).
    pub rounds: usize,
}

/// Pair, merge, then prune. The relabel map covers every merged and
/// pruned label, so composing it over original labels is total.
pub fn refine_pass(
    topics: &TopicList,
    gateway: &Gateway,
    config: &RefineConfig,
) -> Result<RefineOutcome, RefinementError> {
    assert!(config.iterations >= 1, "iterations must be at least 1");
    let mut list = topics.clone();
    let mut relabel = RelabelMap::new();
    let mut rounds = 0;

    for _ in 0..config.iterations {
        if list.len() < 2 {
            break;
        }
        let pairs = similar_pairs(
            &list,
            gateway,
            &config.embed_model,
            config.similarity_threshold,
        )?;
        if pairs.is_empty() {
            break;
        }
        let merge_config = MergeConfig {
            model: config.chat_model.clone(),
            template: config.template.clone(),
            batch_size: config.merge_batch_size,
            max_tokens: config.max_tokens,
        };
        let directives = merge_round(&pairs, &list, gateway, &merge_config)?;
        if directives.is_empty() {
            break;
        }
        let (merged, round_map) = apply_merges(&list, &directives);
        for (old, target) in round_map.entries() {
            match target {
                RelabelTarget::Renamed(new) => relabel.record(old, new),
                RelabelTarget::Removed => relabel.mark_removed(old),
            }
        }
        list = merged;
        rounds += 1;
    }

    let before: Vec<String> = list.topics().iter().map(|t| t.label.clone()).collect();
    let pruned = prune_infrequent(&list, config.prune_threshold)?;
    for label in before {
        if pruned.find(&label).is_none() {
            relabel.mark_removed(&label);
        }
    }
    Ok(RefineOutcome {
        list: pruned,
        relabel,
        rounds,
    })
}
