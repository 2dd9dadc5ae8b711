//! Prompt-based topic modeling for text corpora.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. **plan/sample** ([`sampling`], [`corpus`]): bound the number of
//!    topics worth finding, pick a sample size whose miss probability is
//!    acceptable, and draw the sample.
//! 2. **generate** ([`generation`]): iterate an LLM over the sample,
//!    growing a flat list of labeled, described, frequency-counted topics.
//! 3. **refine** ([`refinement`]): merge near-duplicate topics (embedding
//!    cosine gate + merge prompts) and prune infrequent ones.
//! 4. **assign** ([`assignment`]): label each document with topics from
//!    the list, demanding a verbatim supporting quote, with a
//!    self-correcting retry loop.
//! 5. **hierarchy** ([`hierarchy`]): generate document-grounded
//!    second-level subtopics under each top-level topic.
//! 6. **evaluate** ([`metrics`]): score assignments against ground-truth
//!    classes (Purity, Inverse Purity, P1, ARI, NMI) or against another
//!    run (stability).
//!
//! All model traffic flows through [`gateway`], which hosts a
//! deterministic mock so every stage runs offline and reproducibly.

pub mod assignment;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod gateway;
pub mod generation;
pub mod hierarchy;
pub mod manifest;
pub mod metrics;
pub mod prompts;
pub mod refinement;
pub mod sampling;
pub mod topics;

pub use corpus::{Corpus, Document, TokenEstimator};
pub use gateway::{CompletionRequest, CompletionResponse, Gateway, UsageRecord};
pub use topics::{Topic, TopicList};
