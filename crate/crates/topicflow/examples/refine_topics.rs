//! Merge near-duplicate topics and prune infrequent ones.
//!
//! Refinement runs in two steps. First, topic descriptions are
//! embedded and pairs above a cosine-similarity threshold are sent to
//! the model in batches; the model's merge directives are validated
//! and applied (counts sum, chained merges resolve transitively, a
//! relabel map records every rename). Second, topics whose generation
//! count never reached the prune threshold are removed.
//!
//! This example scripts the chat mock with one merge directive and
//! arranges embeddings so exactly one pair crosses the threshold.
//!
//! Run with: cargo run --example refine_topics

use std::sync::Arc;

use topicflow::gateway::mock::{MockChat, MockEmbedder};
use topicflow::refinement::{refine_pass, RefineConfig, RelabelTarget};
use topicflow::topics::{Topic, TopicList};
use topicflow::Gateway;

fn main() {
    let topics = TopicList::from_topics(vec![
        Topic::new(1, "Employer Taxes", "Mentions taxation policy for employers.")
            .unwrap()
            .with_count(8),
        Topic::new(1, "Employment Tax Reporting", "Mentions reporting requirements for employers.")
            .unwrap()
            .with_count(7),
        Topic::new(1, "Immigration", "Mentions policies and laws on the immigration process.")
            .unwrap()
            .with_count(12),
        Topic::new(1, "Voting", "Mentions rules and regulation for the voting process.")
            .unwrap()
            .with_count(2),
    ])
    .expect("unique labels");

    // Presets pin the geometry: the two tax topics sit almost parallel,
    // the other two are orthogonal to them and to each other.
    let embedder = MockEmbedder::hashed(3)
        .with_label_preset("Employer Taxes", vec![1.0, 0.0, 0.0])
        .with_label_preset("Employment Tax Reporting", vec![0.9, 0.1, 0.0])
        .with_label_preset("Immigration", vec![0.0, 1.0, 0.0])
        .with_label_preset("Voting", vec![0.0, 0.0, 1.0]);

    // One scripted merge directive in the documented response shape:
    // the merged topic, then the source topics in parentheses.
    let chat = MockChat::new().with_script([
        "[1] Employment Taxes: Mentions taxation and reporting requirements for employers. \
         ([1] Employer Taxes, [1] Employment Tax Reporting)",
    ]);
    let gateway = Gateway::new(Arc::new(chat)).with_embedder(Arc::new(embedder));

    let mut config = RefineConfig::new("mock-chat", "mock-embed");
    config.similarity_threshold = 0.5;
    config.prune_threshold = 10;

    println!("before refinement:");
    for t in topics.topics() {
        println!("  {}", t.file_line());
    }

    let outcome = refine_pass(&topics, &gateway, &config).expect("scripted run");

    println!("\nafter refinement ({} merge rounds):", outcome.rounds);
    for t in outcome.list.topics() {
        println!("  {}", t.file_line());
    }

    // The relabel map is what downstream assignments use to stay
    // consistent with the refined list: renames point at the merged
    // label, prunes are marked removed.
    println!("\nrelabel map:");
    for (old, target) in outcome.relabel.entries() {
        match target {
            RelabelTarget::Renamed(new) => println!("  {old} -> {new}"),
            RelabelTarget::Removed => println!("  {old} -> (removed)"),
        }
    }
}
