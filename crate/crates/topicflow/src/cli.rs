//! Command-line pipeline around the library stages.
//!
//! Nine subcommands cover the workflow end to end: plan-sample, sample,
//! generate, refine, assign, hierarchy, evaluate, stability, and cost.
//! Every run writes a manifest (`<out>.manifest.json`) digesting its
//! inputs, outputs, seeds, and gateway usage, so reruns can be audited
//! for byte-identical results and spend can be aggregated later.
//!
//! Exit codes: 0 success; 1 usage or configuration problems; 2 provider
//! failures (terminal errors or exhausted retries); 3 invalid data
//! (unreadable corpora, malformed topic or assignment files, metric
//! domain errors).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::assignment::{assign_corpus, load_assignments, write_assignments, AssignmentError};
use crate::config::{load_config, ConfigError, PipelineConfig};
use crate::corpus::{load_corpus, sample, CorpusError};
use crate::gateway::UsageRecord;
use crate::generation::{generation_pass, GenerationError};
use crate::hierarchy::{build_hierarchy, load_hierarchy, write_hierarchy, HierarchyError};
use crate::manifest::{manifest_path_for, Manifest, ManifestError};
use crate::metrics::{
    adjusted_rand_index, alignment_report, contingency, harmonic_purity, inverse_purity, nmi,
    purity, read_labels_tsv, Clustering, MetricsError,
};
use crate::refinement::{refine_pass, RefinementError, RelabelTarget};
use crate::sampling::{recommend_sample_size, SampleSizePlan, SamplingError};
use crate::topics::{load_topic_file, save_topic_file, Topic, TopicError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PROVIDER: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Refinement(#[from] RefinementError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl CliError {
    /// Map an error to the exit-code contract in the module docs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Generation(GenerationError::Provider { .. })
            | CliError::Refinement(RefinementError::Gateway(_))
            | CliError::Assignment(AssignmentError::Gateway(_))
            | CliError::Hierarchy(HierarchyError::Gateway(_)) => EXIT_PROVIDER,
            _ => EXIT_DATA,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "topicflow",
    version,
    about = "Prompt-based topic modeling over document corpora"
)]
pub struct Cli {
    /// TOML configuration file; built-in offline defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recommend a generation sample size for a corpus.
    PlanSample(PlanSampleArgs),
    /// Draw a seeded random sample from a corpus.
    Sample(SampleArgs),
    /// Generate first-level topics over a sampled corpus.
    Generate(GenerateArgs),
    /// Merge near-duplicate topics and prune rare ones.
    Refine(RefineArgs),
    /// Assign documents to topics, demanding verifiable quotes.
    Assign(AssignArgs),
    /// Build grounded second-level subtopics under each topic.
    Hierarchy(HierarchyArgs),
    /// Score assignments against ground-truth classes.
    Evaluate(EvaluateArgs),
    /// Measure agreement between two assignment runs.
    Stability(StabilityArgs),
    /// Aggregate usage and cost across run manifests.
    Cost(CostArgs),
}

#[derive(Debug, Args)]
pub struct PlanSampleArgs {
    /// Corpus JSONL with one {"id", "text"} object per line.
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Fewest sample documents the rarest interesting topic must supply.
    #[arg(long)]
    pub min_topic_docs: Option<usize>,
    /// Acceptable probability of missing such a topic entirely.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Monte Carlo trials per candidate size.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest sample size to consider (corpus size when omitted).
    #[arg(long)]
    pub search_max: Option<usize>,
    /// Plan JSON output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Documents to draw.
    #[arg(long, conflicts_with = "plan", required_unless_present = "plan")]
    pub size: Option<usize>,
    /// Take the size from a plan-sample output file instead.
    #[arg(long, value_name = "FILE")]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampled corpus JSONL output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write the unsampled remainder here.
    #[arg(long, value_name = "FILE")]
    pub rest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Sampled corpus JSONL to iterate over.
    #[arg(long, value_name = "FILE")]
    pub sample: PathBuf,
    /// Topic list output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write the per-document generation trace as JSON.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Topic list to refine.
    #[arg(long, value_name = "FILE")]
    pub topics: PathBuf,
    /// Refined topic list output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Relabel map TSV output path (default: <out>.relabel.tsv).
    #[arg(long, value_name = "FILE")]
    pub relabel: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    /// Corpus JSONL to assign (typically the full corpus).
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Topic list to assign from.
    #[arg(long, value_name = "FILE")]
    pub topics: PathBuf,
    /// Assignment JSONL output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HierarchyArgs {
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Top-level topic list.
    #[arg(long, value_name = "FILE")]
    pub topics: PathBuf,
    /// Assignments that group documents under topics.
    #[arg(long, value_name = "FILE")]
    pub assignments: PathBuf,
    /// Existing hierarchy file whose subtopics seed each branch.
    #[arg(long, value_name = "FILE")]
    pub seed_hierarchy: Option<PathBuf>,
    /// Hierarchy output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Assignment JSONL produced by the assign command.
    #[arg(long, value_name = "FILE")]
    pub assignments: PathBuf,
    /// Ground-truth classes as "<id>\t<class>" lines.
    #[arg(long, value_name = "FILE", conflicts_with = "corpus", required_unless_present = "corpus")]
    pub labels: Option<PathBuf>,
    /// Corpus JSONL whose documents carry "label" fields.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Metric report JSON output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// Assignment files from two runs over the same documents.
    #[arg(value_name = "FIRST")]
    pub first: PathBuf,
    #[arg(value_name = "SECOND")]
    pub second: PathBuf,
    /// Agreement report JSON output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Manifest files from finished runs.
    #[arg(value_name = "MANIFEST", required = true)]
    pub manifests: Vec<PathBuf>,
    /// Also write the aggregate as JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Full evaluation record written by the evaluate command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    pub predicted_topics: usize,
    pub truth_classes: usize,
    pub purity: f64,
    pub inverse_purity: f64,
    pub p1: f64,
    pub ari: f64,
    pub nmi: f64,
}

/// Per-manifest usage plus totals, written by the cost command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub runs: Vec<CostEntry>,
    pub total: UsageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub manifest: String,
    pub command: String,
    pub usage: UsageRecord,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

/// `<path><suffix>`, e.g. `refined.txt` -> `refined.txt.relabel.tsv`.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn base_manifest(command: &str, config_path: Option<&Path>) -> Result<Manifest, CliError> {
    let mut manifest = Manifest::new(command);
    manifest.record_config(config_path)?;
    Ok(manifest)
}

/// Parse-level entry point: dispatch a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = match cli.config.as_deref() {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::PlanSample(args) => plan_sample_cmd(&config, config_path, &args),
        Command::Sample(args) => sample_cmd(&config, config_path, &args),
        Command::Generate(args) => generate_cmd(&config, config_path, &args),
        Command::Refine(args) => refine_cmd(&config, config_path, &args),
        Command::Assign(args) => assign_cmd(&config, config_path, &args),
        Command::Hierarchy(args) => hierarchy_cmd(&config, config_path, &args),
        Command::Evaluate(args) => evaluate_cmd(config_path, &args),
        Command::Stability(args) => stability_cmd(config_path, &args),
        Command::Cost(args) => cost_cmd(config_path, &args),
    }
}

fn plan_sample_cmd(
    config: &PipelineConfig,
    config_path: Option<&Path>,
    args: &PlanSampleArgs,
) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus)?;
    let min_topic_docs = args.min_topic_docs.unwrap_or(config.sampling.min_topic_docs);
    let epsilon = args.epsilon.unwrap_or(config.sampling.epsilon);
    let trials = args.trials.unwrap_or(config.sampling.trials);
    let seed = args.seed.unwrap_or(config.sampling.seed);
    let search_max = args.search_max.unwrap_or_else(|| corpus.len());

    let plan = recommend_sample_size(corpus.len(), min_topic_docs, epsilon, search_max, trials, seed)?;
    write_json(&args.out, &plan)?;

    let mut manifest = base_manifest("plan-sample", config_path)?;
    manifest.record_input(&args.corpus)?;
    manifest.record_seed("monte-carlo", seed);
    manifest.record_fact("corpus_size", plan.corpus_size);
    manifest.record_fact("min_topic_docs", plan.min_topic_docs);
    manifest.record_fact("epsilon", plan.epsilon);
    manifest.record_fact("trials", trials);
    manifest.record_fact("sample_size", plan.sample_size);
    manifest.record_output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;

    println!(
        "plan: sample {} of {} documents (topic bound {}, miss probability {:.6})",
        plan.sample_size, plan.corpus_size, plan.topic_upper_bound, plan.p_star
    );
    Ok(())
}

fn sample_cmd(
    config: &PipelineConfig,
    config_path: Option<&Path>,
    args: &SampleArgs,
) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus)?;
    let size = match (args.size, args.plan.as_deref()) {
        (Some(size), None) => size,
        (None, Some(plan_path)) => read_json::<SampleSizePlan>(plan_path)?.sample_size,
        _ => return Err(CliError::Usage("pass exactly one of --size or --plan".into())),
    };
    let seed = args.seed.unwrap_or(config.sampling.seed);

    let (sampled, rest) = sample(&corpus, size, seed)?;
    sampled.write_jsonl(&args.out)?;
    if let Some(rest_path) = args.rest.as_deref() {
        rest.write_jsonl(rest_path)?;
    }

    let mut manifest = base_manifest("sample", config_path)?;
    manifest.record_input(&args.corpus)?;
    if let Some(plan_path) = args.plan.as_deref() {
        manifest.record_input(plan_path)?;
    }
    manifest.record_seed("sample", seed);
    manifest.record_fact("corpus_size", corpus.len());
    manifest.record_fact("sample_size", size);
    manifest.record_output(&args.out)?;
    if let Some(rest_path) = args.rest.as_deref() {
        manifest.record_output(rest_path)?;
    }
    manifest.write(&manifest_path_for(&args.out))?;

    println!("sample: drew {} of {} documents (seed {})", size, corpus.len(), seed);
    Ok(())
}

fn generate_cmd(
    config: &PipelineConfig,
    config_path: Option<&Path>,
    args: &GenerateArgs,
) -> Result<(), CliError> {
    let sample = load_corpus(&args.sample)?;
    let seeds = config.seed_topics()?;
    let gateway = config.build_gateway()?;
    let generation_config = config.generation_config()?;

    let (list, trace) = generation_pass(&sample, &seeds, &gateway, &generation_config)?;
    save_topic_file(&args.out, &list)?;
    if let Some(trace_path) = args.trace.as_deref() {
        write_json(trace_path, &trace)?;
    }

    let mut manifest = base_manifest("generate", config_path)?;
    manifest.record_input(&args.sample)?;
    if let Some(seed_path) = config.generation.seed_topics.as_deref() {
        manifest.record_input(seed_path)?;
    }
    manifest.record_fact("documents_processed", trace.records.len());
    manifest.record_fact("stopped_early", trace.stopped_early);
    manifest.record_fact("seed_topics", seeds.len());
    manifest.record_fact("topics", list.len());
    manifest.record_output(&args.out)?;
    if let Some(trace_path) = args.trace.as_deref() {
        manifest.record_output(trace_path)?;
    }
    manifest.record_usage(&gateway);
    manifest.write(&manifest_path_for(&args.out))?;

    println!(
        "generate: {} topics after {} documents{}",
        list.len(),
        trace.records.len(),
        if trace.stopped_early { " (stopped early: no new topics)" } else { "" }
    );
    Ok(())
}

fn refine_cmd(
    config: &PipelineConfig,
    config_path: Option<&Path>,
    args: &RefineArgs,
) -> Result<(), CliError> {
    let topics = load_topic_file(&args.topics)?;
    let gateway = config.build_gateway()?;
    let refine_config = config.refine_config()?;

    let before = topics.len();
    let outcome = refine_pass(&topics, &gateway, &refine_config)?;
    let relabel_path = args
        .relabel
        .clone()
        .unwrap_or_else(|| suffixed(&args.out, ".relabel.tsv"));
    save_topic_file(&args.out, &outcome.list)?;
    outcome.relabel.write_tsv(&relabel_path)?;

    let removed = outcome
        .relabel
        .entries()
        .filter(|(_, target)| matches!(target, RelabelTarget::Removed))
        .count();
    let mut manifest = base_manifest("refine", config_path)?;
    manifest.record_input(&args.topics)?;
    manifest.record_fact("topics_before", before);
    manifest.record_fact("topics_after", outcome.list.len());
    manifest.record_fact("merge_rounds", outcome.rounds);
    manifest.record_fact("labels_remapped", outcome.relabel.len());
    manifest.record_fact("labels_removed", removed);
    manifest.record_output(&args.out)?;
    manifest.record_output(&relabel_path)?;
    manifest.record_usage(&gateway);
    manifest.write(&manifest_path_for(&args.out))?;

    println!(
        "refine: {} -> {} topics ({} merge rounds, {} labels remapped)",
        before,
        outcome.list.len(),
        outcome.rounds,
        outcome.relabel.len()
    );
    Ok(())
}

fn assign_cmd(
    config: &PipelineConfig,
    config_path: Option<&Path>,
    args: &AssignArgs,
) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus)?;
    let topics = load_topic_file(&args.topics)?;
    let gateway = config.build_gateway()?;
    let assign_config = config.assign_config()?;

    let run = assign_corpus(&corpus, &topics, &gateway, &assign_config, config.assignment.workers)?;
    write_assignments(&args.out, &run)?;

    let mut manifest = base_manifest("assign", config_path)?;
    manifest.record_input(&args.corpus)?;
    manifest.record_input(&args.topics)?;
    manifest.record_seed("shuffle", assign_config.seed);
    manifest.record_fact("documents", run.documents_processed());
    manifest.record_fact("assigned", run.assignments.len());
    manifest.record_fact("exhausted", run.exhausted.len());
    for (kind, count) in &run.error_tallies {
        manifest.record_fact(format!("errors.{kind}"), count);
    }
    manifest.record_output(&args.out)?;
    manifest.record_usage(&gateway);
    manifest.write(&manifest_path_for(&args.out))?;

    println!(
        "assign: {} of {} documents assigned ({} exhausted retries)",
        run.assignments.len(),
        run.documents_processed(),
        run.exhausted.len()
    );
    Ok(())
}

fn hierarchy_cmd(
    config: &PipelineConfig,
    config_path: Option<&Path>,
    args: &HierarchyArgs,
) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus)?;
    let topics = load_topic_file(&args.topics)?;
    let assignments = load_assignments(&args.assignments)?;
    let seeds: BTreeMap<String, Vec<Topic>> = match args.seed_hierarchy.as_deref() {
        Some(path) => load_hierarchy(path)?
            .into_iter()
            .map(|branch| {
                let subs = branch.subtopics.iter().map(|s| s.topic.clone()).collect();
                (branch.parent.label.clone(), subs)
            })
            .collect(),
        None => BTreeMap::new(),
    };
    let gateway = config.build_gateway()?;
    let hierarchy_config = config.hierarchy_config()?;

    let run = build_hierarchy(&corpus, &topics, &assignments, &gateway, &hierarchy_config, &seeds)?;
    write_hierarchy(&args.out, &run.branches_only())?;

    let subtopics: usize = run.branches.iter().map(|b| b.branch.subtopics.len()).sum();
    let mut manifest = base_manifest("hierarchy", config_path)?;
    manifest.record_input(&args.corpus)?;
    manifest.record_input(&args.topics)?;
    manifest.record_input(&args.assignments)?;
    if let Some(path) = args.seed_hierarchy.as_deref() {
        manifest.record_input(path)?;
    }
    manifest.record_fact("branches", run.branches.len());
    manifest.record_fact("skipped_topics", run.skipped.len());
    manifest.record_fact("subtopics", subtopics);
    manifest.record_fact("grounding_errors", run.grounding_error_count());
    manifest.record_output(&args.out)?;
    manifest.record_usage(&gateway);
    manifest.write(&manifest_path_for(&args.out))?;

    println!(
        "hierarchy: {} subtopics across {} branches ({} grounding errors dropped)",
        subtopics,
        run.branches.len(),
        run.grounding_error_count()
    );
    Ok(())
}

fn evaluate_cmd(config_path: Option<&Path>, args: &EvaluateArgs) -> Result<(), CliError> {
    let assignments = load_assignments(&args.assignments)?;
    let predicted = Clustering::from_assignments(&assignments)?;
    let truth = match (args.labels.as_deref(), args.corpus.as_deref()) {
        (Some(labels_path), None) => Clustering::new(read_labels_tsv(labels_path)?)?,
        (None, Some(corpus_path)) => Clustering::from_labeled_corpus(&load_corpus(corpus_path)?)?,
        _ => return Err(CliError::Usage("pass exactly one of --labels or --corpus".into())),
    };

    let table = contingency(&predicted, &truth)?;
    let report = EvalReport {
        documents: predicted.len(),
        predicted_topics: predicted.cluster_labels().len(),
        truth_classes: truth.cluster_labels().len(),
        purity: purity(&table),
        inverse_purity: inverse_purity(&table),
        p1: harmonic_purity(&table),
        ari: adjusted_rand_index(&table),
        nmi: nmi(&table),
    };
    write_json(&args.out, &report)?;

    let mut manifest = base_manifest("evaluate", config_path)?;
    manifest.record_input(&args.assignments)?;
    if let Some(path) = args.labels.as_deref() {
        manifest.record_input(path)?;
    }
    if let Some(path) = args.corpus.as_deref() {
        manifest.record_input(path)?;
    }
    manifest.record_fact("documents", report.documents);
    manifest.record_fact("predicted_topics", report.predicted_topics);
    manifest.record_fact("truth_classes", report.truth_classes);
    manifest.record_output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;

    println!(
        "evaluate: purity {:.4}, inverse purity {:.4}, P1 {:.4}, ARI {:.4}, NMI {:.4}",
        report.purity, report.inverse_purity, report.p1, report.ari, report.nmi
    );
    Ok(())
}

fn stability_cmd(config_path: Option<&Path>, args: &StabilityArgs) -> Result<(), CliError> {
    let first = Clustering::from_assignments(&load_assignments(&args.first)?)?;
    let second = Clustering::from_assignments(&load_assignments(&args.second)?)?;
    let report = alignment_report(&first, &second)?;
    write_json(&args.out, &report)?;

    let mut manifest = base_manifest("stability", config_path)?;
    manifest.record_input(&args.first)?;
    manifest.record_input(&args.second)?;
    manifest.record_fact("documents", first.len());
    manifest.record_fact("first_topics", first.cluster_labels().len());
    manifest.record_fact("second_topics", second.cluster_labels().len());
    manifest.record_output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;

    println!(
        "stability: P1 {:.4}, ARI {:.4}, NMI {:.4} over {} documents",
        report.p1,
        report.ari,
        report.nmi,
        first.len()
    );
    Ok(())
}

fn cost_cmd(config_path: Option<&Path>, args: &CostArgs) -> Result<(), CliError> {
    let mut report = CostReport::default();
    for path in &args.manifests {
        let manifest = Manifest::load(path)?;
        report.total.prompt_tokens += manifest.usage.prompt_tokens;
        report.total.completion_tokens += manifest.usage.completion_tokens;
        report.total.request_count += manifest.usage.request_count;
        report.total.estimated_cost += manifest.usage.estimated_cost;
        report.runs.push(CostEntry {
            manifest: path.display().to_string(),
            command: manifest.command.clone(),
            usage: manifest.usage,
        });
    }

    for entry in &report.runs {
        println!(
            "{}: {} prompt + {} completion tokens, {} requests, cost {:.4} ({})",
            entry.command,
            entry.usage.prompt_tokens,
            entry.usage.completion_tokens,
            entry.usage.request_count,
            entry.usage.estimated_cost,
            entry.manifest
        );
    }
    println!(
        "total: {} prompt + {} completion tokens, {} requests, cost {:.4}",
        report.total.prompt_tokens,
        report.total.completion_tokens,
        report.total.request_count,
        report.total.estimated_cost
    );

    if let Some(out) = args.out.as_deref() {
        write_json(out, &report)?;
        let mut manifest = base_manifest("cost", config_path)?;
        for path in &args.manifests {
            manifest.record_input(path)?;
        }
        manifest.record_fact("runs", report.runs.len());
        manifest.record_output(out)?;
        manifest.write(&manifest_path_for(out))?;
    }
    Ok(())
}

/// Process-level entry point: parse the command line, run, and map the
/// outcome to an exit code.
pub fn main_entry() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed; real
            // parse errors print to stderr and fail as usage errors.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            e.exit_code()
        }
    }
}
