//! Grow grounded second-level subtopics under assigned topics.
//!
//! Hierarchy generation groups documents by their assigned top-level
//! topic, packs each group into token-budgeted chunks, and asks the
//! model for second-level subtopics that cite the chunk documents they
//! came from. A subtopic citing no in-chunk document is dropped with a
//! grounding error; everything persisted is traceable to real
//! documents.
//!
//! Run with: cargo run --example build_hierarchy

use std::collections::BTreeMap;
use std::sync::Arc;

use topicflow::assignment::{assign_corpus, AssignConfig};
use topicflow::gateway::mock::{MockEmbedder, PipelineMock};
use topicflow::hierarchy::{build_hierarchy, HierarchyConfig};
use topicflow::topics::{Topic, TopicList};
use topicflow::{Corpus, Document, Gateway};

fn main() {
    let docs: Vec<Document> = (0..10)
        .map(|i| Document {
            id: format!("doc-{i}"),
            text: format!("Filing {i} describes a measure on one of the recurring themes."),
            label: None,
        })
        .collect();
    let corpus = Corpus::from_documents(docs, "inline");

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

    // First assign, then build the hierarchy from the assignments.
    let mut assign_config = AssignConfig::new("mock-chat");
    assign_config.seed = 17;
    let run = assign_corpus(&corpus, &topics, &gateway, &assign_config, 2).expect("offline run");
    println!("assigned {} documents", run.assignments.len());

    let config = HierarchyConfig::new("mock-chat");
    let seeds: BTreeMap<String, Vec<Topic>> = BTreeMap::new();
    let hierarchy =
        build_hierarchy(&corpus, &topics, &run.assignments, &gateway, &config, &seeds)
            .expect("offline run");

    for branch_run in &hierarchy.branches {
        let branch = &branch_run.branch;
        println!(
            "\n[1] {} ({} documents, {} chunk{})",
            branch.parent.label,
            branch.doc_ids.len(),
            branch_run.chunks,
            if branch_run.chunks == 1 { "" } else { "s" }
        );
        for sub in &branch.subtopics {
            println!(
                "  [2] {}: {} <- {}",
                sub.topic.label,
                sub.topic.description,
                sub.supporting.join(", ")
            );
        }
    }
    if !hierarchy.skipped.is_empty() {
        println!("\ntopics with no assigned documents, skipped: {:?}", hierarchy.skipped);
    }
    println!(
        "\ngrounding errors (subtopics dropped): {}",
        hierarchy.grounding_error_count()
    );
}
