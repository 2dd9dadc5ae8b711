//! Assign documents to topics with verifiable quotes and retries.
//!
//! Every assignment must cite a quote that actually occurs in the
//! document (ellipses allowed; whitespace normalized; case kept). A
//! response naming a topic outside the list, citing an unverifiable
//! quote, or answering "None" triggers a retry: the prompt names the
//! error kind and shows the topic list reshuffled under a seeded
//! per-attempt permutation, up to a retry limit.
//!
//! Run with: cargo run --example assign_topics

use std::sync::Arc;

use topicflow::assignment::{assign_corpus, AssignConfig};
use topicflow::gateway::mock::{MockEmbedder, PipelineMock};
use topicflow::topics::{Topic, TopicList};
use topicflow::{Corpus, Document, Gateway};

fn main() {
    let docs: Vec<Document> = (0..6)
        .map(|i| Document {
            id: format!("doc-{i}"),
            text: format!(
                "Report {i} opens with its own distinctive first sentence, then \
                 continues into supporting material that never fits in a quote."
            ),
            label: None,
        })
        .collect();
    let corpus = Corpus::from_documents(docs, "inline");

    // The mock provider recognizes assignment prompts, picks its theme
    // for the document out of the rendered topic list, and quotes the
    // document's opening words, so every quote verifies.
    let mock = PipelineMock::new();
    let topics = TopicList::from_topics(
        mock.themes()
            .iter()
            .map(|(label, desc)| Topic::new(1, label, desc).expect("valid theme"))
            .collect(),
    )
    .expect("unique labels");

    let gateway =
        Gateway::new(Arc::new(mock)).with_embedder(Arc::new(MockEmbedder::hashed(16)));
    let mut config = AssignConfig::new("mock-chat");
    config.seed = 17;

    let run = assign_corpus(&corpus, &topics, &gateway, &config, 2).expect("offline run");

    println!(
        "assigned {} of {} documents",
        run.assignments.len(),
        run.documents_processed()
    );
    for a in &run.assignments {
        let entry = &a.entries[0];
        println!(
            "  {} -> {} (attempt {}) quote: \"{}\"",
            a.doc_id, entry.label, a.attempts, entry.quote
        );
    }

    if !run.exhausted.is_empty() {
        println!("exhausted retries on {} documents", run.exhausted.len());
    }
    println!("\nerror tallies across all attempts:");
    if run.error_tallies.is_empty() {
        println!("  (none: every document assigned on the first attempt)");
    }
    for (kind, count) in &run.error_tallies {
        println!("  {kind}: {count}");
    }
}
