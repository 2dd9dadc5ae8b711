//! Run configuration: one TOML file wires the provider, models, and stage
//! parameters for a whole pipeline run.
//!
//! Every field has a default, and the defaults describe a fully offline
//! run (mock provider, bundled templates, bundled seed topics), so an
//! empty file is a valid configuration. Validation collects every
//! violation instead of stopping at the first, so a bad file is fixed in
//! one round trip.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignConfig, AssignMode};
use crate::corpus::TokenEstimator;
use crate::gateway::http::{HttpChat, HttpEmbedder, HttpProviderConfig};
use crate::gateway::mock::{MockEmbedder, PipelineMock};
use crate::gateway::replay::{RecordingChat, ReplayChat};
use crate::gateway::{ChatProvider, EmbeddingProvider, Gateway, ProviderError, RetryPolicy};
use crate::generation::GenerationConfig;
use crate::hierarchy::HierarchyConfig;
use crate::prompts::{self, PromptError, PromptTemplate};
use crate::refinement::RefineConfig;
use crate::topics::{parse_topic_line, TopicError, TopicList};

/// Which chat backend a run talks to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// The stage-aware deterministic mock; needs no credentials.
    #[default]
    Mock,
    /// A live HTTP endpoint (OpenAI-style JSON).
    Http,
    /// Responses replayed from a recorded fixture file.
    Replay,
}

/// Model ids sent with each stage's requests. Under the mock provider
/// they are only labels in the usage report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub generation: String,
    pub refinement: String,
    pub assignment: String,
    pub hierarchy: String,
    pub embedding: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            generation: "mock-chat".into(),
            refinement: "mock-chat".into(),
            assignment: "mock-chat".into(),
            hierarchy: "mock-chat".into(),
            embedding: "mock-embed".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Chat/embedding endpoint base URL (http kind only).
    pub endpoint: String,
    /// Literal credential; prefer `api_key_env`.
    pub api_key: String,
    /// Environment variable that overrides `api_key` when set and
    /// non-empty.
    pub api_key_env: String,
    /// Recorded transcript to replay (replay kind only).
    pub fixture: Option<PathBuf>,
    /// Transcript file to record live responses into (http kind only).
    pub record: Option<PathBuf>,
    pub max_inflight: usize,
    /// Minimum milliseconds between request dispatches; 0 disables pacing.
    pub min_interval_ms: u64,
    pub retry_max_attempts: u32,
    pub retry_base_delay_ms: u64,
    pub retry_max_delay_ms: u64,
    pub models: ModelConfig,
    /// Cost per 1000 tokens by model id (prompt and completion tokens
    /// priced alike); unlisted models cost 0.
    pub rates_per_1k: BTreeMap<String, f64>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        Self {
            kind: ProviderKind::Mock,
            endpoint: String::new(),
            api_key: String::new(),
            api_key_env: "TOPICFLOW_API_KEY".into(),
            fixture: None,
            record: None,
            max_inflight: 4,
            min_interval_ms: 0,
            retry_max_attempts: retry.max_attempts,
            retry_base_delay_ms: retry.base_delay_ms,
            retry_max_delay_ms: retry.max_delay_ms,
            models: ModelConfig::default(),
            rates_per_1k: BTreeMap::new(),
        }
    }
}

/// Document truncation for prompt rendering. Budgets are estimated
/// tokens; 0 sends documents untruncated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationConfig {
    /// Characters per estimated token.
    pub divisor: usize,
    pub generation_budget: usize,
    pub assignment_budget: usize,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            divisor: 4,
            generation_budget: 2000,
            assignment_budget: 2000,
        }
    }
}

/// The "0 disables" convention used by budgets and thresholds.
fn non_zero(value: usize) -> Option<usize> {
    (value > 0).then_some(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    /// Acceptable probability that some topic at the design frequency is
    /// missed entirely by the sample.
    pub epsilon: f64,
    /// Monte Carlo trials per candidate sample size.
    pub trials: usize,
    pub seed: u64,
    /// Fewest sample documents a topic must supply; the planner sizes the
    /// sample so topics this rare still appear.
    pub min_topic_docs: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            epsilon: 0.005,
            trials: 10_000,
            seed: 17,
            min_topic_docs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    /// Seed topic file; the bundled two-topic list when unset.
    pub seed_topics: Option<PathBuf>,
    /// Consecutive documents yielding no new topic before generation
    /// stops early; 0 never stops.
    pub drought_threshold: usize,
    pub max_tokens: u32,
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self {
            seed_topics: None,
            drought_threshold: 100,
            max_tokens: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementSection {
    /// Cosine similarity at or above which two topics become a merge
    /// candidate pair.
    pub similarity_threshold: f64,
    /// Candidate pairs reviewed per merge prompt.
    pub merge_batch_size: usize,
    /// Topics with fewer documents than this are dropped.
    pub prune_threshold: u64,
    /// Merge rounds per refinement pass.
    pub iterations: usize,
    pub max_tokens: u32,
}

impl Default for RefinementSection {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.5,
            merge_batch_size: 5,
            prune_threshold: 10,
            iterations: 1,
            max_tokens: 300,
        }
    }
}

/// Assignment cardinality, mirroring [`AssignMode`] in serializable form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignModeSection {
    #[default]
    Single,
    Multi,
}

impl From<AssignModeSection> for AssignMode {
    fn from(mode: AssignModeSection) -> Self {
        match mode {
            AssignModeSection::Single => AssignMode::Single,
            AssignModeSection::Multi => AssignMode::Multi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignmentSection {
    pub mode: AssignModeSection,
    /// Total prompt attempts allowed per document.
    pub retry_limit: u32,
    pub seed: u64,
    /// Documents assigned concurrently.
    pub workers: usize,
    pub max_tokens: u32,
}

impl Default for AssignmentSection {
    fn default() -> Self {
        Self {
            mode: AssignModeSection::Single,
            retry_limit: 10,
            seed: 17,
            workers: 4,
            max_tokens: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySection {
    /// Estimated-token budget per document chunk in subtopic prompts.
    pub chunk_budget: usize,
    pub max_tokens: u32,
}

impl Default for HierarchySection {
    fn default() -> Self {
        Self {
            chunk_budget: 2000,
            max_tokens: 300,
        }
    }
}

/// Per-stage template file overrides; bundled templates when unset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatesSection {
    pub generation: Option<PathBuf>,
    pub merge: Option<PathBuf>,
    pub assignment: Option<PathBuf>,
    pub correction: Option<PathBuf>,
    pub subtopics: Option<PathBuf>,
}

/// The whole run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub provider: ProviderConfig,
    pub truncation: TruncationConfig,
    pub sampling: SamplingSection,
    pub generation: GenerationSection,
    pub refinement: RefinementSection,
    pub assignment: AssignmentSection,
    pub hierarchy: HierarchySection,
    pub templates: TemplatesSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("invalid configuration:\n{}", violations.join("\n"))]
    Invalid { violations: Vec<String> },
    #[error("cannot open provider transcript {path}: {source}")]
    Transcript {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("provider setup failed: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] PromptError),
    #[error(transparent)]
    Topic(#[from] TopicError),
}

/// Read and validate a TOML configuration file.
pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let config: PipelineConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        source: Box::new(e),
    })?;
    config.validate()?;
    Ok(config)
}

impl PipelineConfig {
    /// The credential to send: the `api_key_env` variable when set and
    /// non-empty, the literal `api_key` otherwise.
    pub fn resolved_api_key(&self) -> String {
        if !self.provider.api_key_env.is_empty() {
            if let Ok(value) = env::var(&self.provider.api_key_env) {
                if !value.is_empty() {
                    return value;
                }
            }
        }
        self.provider.api_key.clone()
    }

    /// Check every constraint, reporting all violations together.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut violations = Vec::new();
        let p = &self.provider;

        match p.kind {
            ProviderKind::Http => {
                if p.endpoint.trim().is_empty() {
                    violations
                        .push("provider.endpoint is required when provider.kind is \"http\"".into());
                }
                if self.resolved_api_key().is_empty() {
                    violations.push(format!(
                        "provider.api_key is empty and ${} is unset",
                        p.api_key_env
                    ));
                }
                if p.fixture.is_some() {
                    violations.push("provider.fixture only applies to replay providers".into());
                }
            }
            ProviderKind::Replay => {
                if p.fixture.is_none() {
                    violations
                        .push("provider.fixture is required when provider.kind is \"replay\"".into());
                }
                if p.record.is_some() {
                    violations.push("provider.record only applies to http providers".into());
                }
            }
            ProviderKind::Mock => {
                if p.fixture.is_some() {
                    violations.push("provider.fixture only applies to replay providers".into());
                }
                if p.record.is_some() {
                    violations.push("provider.record only applies to http providers".into());
                }
            }
        }
        if p.max_inflight == 0 {
            violations.push("provider.max_inflight must be at least 1".into());
        }
        if p.retry_max_attempts == 0 {
            violations.push("provider.retry_max_attempts must be at least 1".into());
        }
        for (name, model) in [
            ("generation", &p.models.generation),
            ("refinement", &p.models.refinement),
            ("assignment", &p.models.assignment),
            ("hierarchy", &p.models.hierarchy),
            ("embedding", &p.models.embedding),
        ] {
            if model.trim().is_empty() {
                violations.push(format!("provider.models.{name} must not be empty"));
            }
        }
        for (model, rate) in &p.rates_per_1k {
            if !rate.is_finite() || *rate < 0.0 {
                violations.push(format!(
                    "provider.rates_per_1k[{model:?}] must be a finite non-negative number"
                ));
            }
        }

        if self.truncation.divisor == 0 {
            violations.push("truncation.divisor must be at least 1".into());
        }
        if !(self.sampling.epsilon > 0.0 && self.sampling.epsilon < 1.0) {
            violations.push("sampling.epsilon must lie in (0, 1)".into());
        }
        if self.sampling.trials == 0 {
            violations.push("sampling.trials must be at least 1".into());
        }
        if self.sampling.min_topic_docs == 0 {
            violations.push("sampling.min_topic_docs must be at least 1".into());
        }
        if !(-1.0..=1.0).contains(&self.refinement.similarity_threshold) {
            violations.push("refinement.similarity_threshold must lie in [-1, 1]".into());
        }
        if self.refinement.merge_batch_size == 0 {
            violations.push("refinement.merge_batch_size must be at least 1".into());
        }
        if self.refinement.iterations == 0 {
            violations.push("refinement.iterations must be at least 1".into());
        }
        if self.assignment.retry_limit == 0 {
            violations.push("assignment.retry_limit must be at least 1".into());
        }
        if self.assignment.workers == 0 {
            violations.push("assignment.workers must be at least 1".into());
        }
        if self.hierarchy.chunk_budget == 0 {
            violations.push("hierarchy.chunk_budget must be at least 1".into());
        }
        for (name, max_tokens) in [
            ("generation", self.generation.max_tokens),
            ("refinement", self.refinement.max_tokens),
            ("assignment", self.assignment.max_tokens),
            ("hierarchy", self.hierarchy.max_tokens),
        ] {
            if max_tokens == 0 {
                violations.push(format!("{name}.max_tokens must be at least 1"));
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid { violations })
        }
    }

    /// Construct the gateway this configuration describes.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        self.validate()?;
        let chat: Arc<dyn ChatProvider> = match self.provider.kind {
            ProviderKind::Mock => Arc::new(PipelineMock::new()),
            ProviderKind::Replay => {
                let path = self.provider.fixture.as_deref().expect("validated");
                Arc::new(
                    ReplayChat::load(path).map_err(|e| ConfigError::Transcript {
                        path: path.display().to_string(),
                        source: e,
                    })?,
                )
            }
            ProviderKind::Http => {
                let http = HttpProviderConfig::new(&self.provider.endpoint, self.resolved_api_key());
                let inner: Arc<dyn ChatProvider> = Arc::new(HttpChat::new(http)?);
                match self.provider.record.as_deref() {
                    Some(path) => Arc::new(RecordingChat::create(inner, path).map_err(|e| {
                        ConfigError::Transcript {
                            path: path.display().to_string(),
                            source: e,
                        }
                    })?),
                    None => inner,
                }
            }
        };
        let embedder: Arc<dyn EmbeddingProvider> = match self.provider.kind {
            ProviderKind::Http => {
                let http = HttpProviderConfig::new(&self.provider.endpoint, self.resolved_api_key());
                Arc::new(HttpEmbedder::new(http)?)
            }
            // Offline runs embed with stable hash-seeded vectors.
            _ => Arc::new(MockEmbedder::hashed(16)),
        };
        let mut gateway = Gateway::new(chat)
            .with_embedder(embedder)
            .with_retry(RetryPolicy {
                max_attempts: self.provider.retry_max_attempts,
                base_delay_ms: self.provider.retry_base_delay_ms,
                max_delay_ms: self.provider.retry_max_delay_ms,
            })
            .with_max_inflight(self.provider.max_inflight)
            .with_min_interval_ms(self.provider.min_interval_ms);
        for (model, rate) in &self.provider.rates_per_1k {
            gateway = gateway.with_rate(model, *rate);
        }
        Ok(gateway)
    }

    pub fn estimator(&self) -> TokenEstimator {
        TokenEstimator::new(self.truncation.divisor)
    }

    fn template(
        name: &str,
        override_path: Option<&Path>,
        default: fn() -> PromptTemplate,
    ) -> Result<PromptTemplate, ConfigError> {
        match override_path {
            Some(path) => Ok(PromptTemplate::from_file(name, path)?),
            None => Ok(default()),
        }
    }

    pub fn generation_template(&self) -> Result<PromptTemplate, ConfigError> {
        Self::template(
            "generation",
            self.templates.generation.as_deref(),
            prompts::default_generation_template,
        )
    }

    pub fn merge_template(&self) -> Result<PromptTemplate, ConfigError> {
        Self::template(
            "merge",
            self.templates.merge.as_deref(),
            prompts::default_merge_template,
        )
    }

    pub fn assignment_template(&self) -> Result<PromptTemplate, ConfigError> {
        Self::template(
            "assignment",
            self.templates.assignment.as_deref(),
            prompts::default_assignment_template,
        )
    }

    pub fn correction_template(&self) -> Result<PromptTemplate, ConfigError> {
        Self::template(
            "correction",
            self.templates.correction.as_deref(),
            prompts::default_correction_template,
        )
    }

    pub fn subtopics_template(&self) -> Result<PromptTemplate, ConfigError> {
        Self::template(
            "subtopics",
            self.templates.subtopics.as_deref(),
            prompts::default_subtopics_template,
        )
    }

    /// Seed topics: the configured file, or the bundled pair.
    pub fn seed_topics(&self) -> Result<TopicList, ConfigError> {
        match self.generation.seed_topics.as_deref() {
            Some(path) => Ok(crate::topics::load_seed_file(path)?),
            None => {
                let mut seeds = Vec::new();
                for line in prompts::default_seed_topics().lines() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    if let Some(parsed) = parse_topic_line(line) {
                        seeds.push(parsed.map_err(ConfigError::Topic)?);
                    }
                }
                Ok(TopicList::from_seeds(seeds)?)
            }
        }
    }

    pub fn generation_config(&self) -> Result<GenerationConfig, ConfigError> {
        Ok(GenerationConfig {
            model: self.provider.models.generation.clone(),
            template: self.generation_template()?,
            drought_threshold: non_zero(self.generation.drought_threshold),
            truncate_budget: non_zero(self.truncation.generation_budget),
            estimator: self.estimator(),
            max_tokens: self.generation.max_tokens,
        })
    }

    pub fn refine_config(&self) -> Result<RefineConfig, ConfigError> {
        Ok(RefineConfig {
            chat_model: self.provider.models.refinement.clone(),
            embed_model: self.provider.models.embedding.clone(),
            template: self.merge_template()?,
            similarity_threshold: self.refinement.similarity_threshold,
            merge_batch_size: self.refinement.merge_batch_size,
            prune_threshold: self.refinement.prune_threshold,
            iterations: self.refinement.iterations,
            max_tokens: self.refinement.max_tokens,
        })
    }

    pub fn assign_config(&self) -> Result<AssignConfig, ConfigError> {
        Ok(AssignConfig {
            model: self.provider.models.assignment.clone(),
            template: self.assignment_template()?,
            correction_template: self.correction_template()?,
            mode: self.assignment.mode.into(),
            retry_limit: self.assignment.retry_limit,
            seed: self.assignment.seed,
            truncate_budget: non_zero(self.truncation.assignment_budget),
            estimator: self.estimator(),
            max_tokens: self.assignment.max_tokens,
        })
    }

    pub fn hierarchy_config(&self) -> Result<HierarchyConfig, ConfigError> {
        Ok(HierarchyConfig {
            model: self.provider.models.hierarchy.clone(),
            template: self.subtopics_template()?,
            chunk_budget: self.hierarchy.chunk_budget,
            estimator: self.estimator(),
            max_tokens: self.hierarchy.max_tokens,
        })
    }
}
