//! Grow a topic list by iterating a model over sampled documents.
//!
//! Each document is shown together with the topics found so far; the
//! model either reuses an existing topic (raising its count) or adds a
//! new one. The run stops early once a long stretch of documents adds
//! nothing new.
//!
//! Uses the offline stage-aware mock provider, so the output is
//! deterministic and no network or API key is needed.
//!
//! Run with: cargo run --example generate_topics

use std::sync::Arc;

use topicflow::gateway::mock::{MockEmbedder, PipelineMock};
use topicflow::generation::{generation_pass, GenerationConfig};
use topicflow::topics::TopicList;
use topicflow::{Corpus, Document, Gateway};

fn main() {
    // Twelve short documents. The mock provider routes each to one of
    // its three built-in themes by hashing the text.
    let docs: Vec<Document> = (0..12)
        .map(|i| Document {
            id: format!("doc-{i:02}"),
            text: format!("Sample document {i}: notes toward one of the recurring themes."),
            label: None,
        })
        .collect();
    let sample = Corpus::from_documents(docs, "inline");

    let gateway = Gateway::new(Arc::new(PipelineMock::new()))
        .with_embedder(Arc::new(MockEmbedder::hashed(16)));

    // No seed topics: the list starts empty and grows from responses.
    let seeds = TopicList::new();
    let config = GenerationConfig::new("mock-chat");

    let (list, trace) = generation_pass(&sample, &seeds, &gateway, &config).expect("offline run");

    println!("processed {} documents", trace.records.len());
    println!("stopped early: {}", trace.stopped_early);
    println!("\ntopic list (label, description, generation count):");
    for topic in list.topics() {
        println!("  {}", topic.file_line());
    }

    println!("\nper-document responses:");
    for record in &trace.records {
        let first = record.raw_response.lines().next().unwrap_or("");
        println!("  {} -> {}", record.doc_id, first);
    }

    let usage = gateway.usage_report();
    println!(
        "\nusage: {} requests, {} prompt + {} completion tokens",
        usage.request_count, usage.prompt_tokens, usage.completion_tokens
    );
}
