//! Record a session to a fixture, then replay it without the provider.
//!
//! RecordingChat wraps any live provider and appends one JSONL record
//! per successful completion, keyed by a request fingerprint (a hash
//! of model, prompt, and sampling settings). ReplayChat serves the
//! fixture back: identical requests get identical responses, and any
//! request that was never recorded is a terminal error instead of a
//! silent guess. That turns one paid run into a permanent offline
//! test fixture.
//!
//! Run with: cargo run --example record_replay

use std::sync::Arc;

use topicflow::gateway::mock::PipelineMock;
use topicflow::gateway::replay::{RecordingChat, ReplayChat};
use topicflow::generation::{generation_pass, GenerationConfig};
use topicflow::topics::TopicList;
use topicflow::{Corpus, Document, Gateway};

fn main() {
    let docs: Vec<Document> = (0..5)
        .map(|i| Document {
            id: format!("doc-{i}"),
            text: format!("Memo {i} covers one of the recurring themes in detail."),
            label: None,
        })
        .collect();
    let corpus = Corpus::from_documents(docs, "inline");
    let seeds = TopicList::new();
    let config = GenerationConfig::new("mock-chat");

    let fixture = std::env::temp_dir().join("topicflow_replay_example.jsonl");
    let _ = std::fs::remove_file(&fixture);

    // Pass 1: a "live" run (the offline mock stands in for a real
    // provider) with a recorder in front of it.
    let recorder = RecordingChat::create(Arc::new(PipelineMock::new()), &fixture)
        .expect("fixture file is writable");
    let gateway = Gateway::new(Arc::new(recorder));
    let (live_topics, _) = generation_pass(&corpus, &seeds, &gateway, &config).expect("offline");
    println!("recorded run produced {} topics", live_topics.len());

    // Pass 2: same run, served entirely from the fixture.
    let replay = ReplayChat::load(&fixture).expect("fixture parses");
    println!("fixture holds {} recorded responses", replay.len());
    let gateway = Gateway::new(Arc::new(replay));
    let (replayed_topics, _) =
        generation_pass(&corpus, &seeds, &gateway, &config).expect("every request was recorded");

    assert_eq!(live_topics, replayed_topics);
    println!("replayed run matches the recorded run exactly:");
    for t in replayed_topics.topics() {
        println!("  {}", t.file_line());
    }

    // A request that never happened during recording fails loudly.
    let unseen = topicflow::CompletionRequest::new("mock-chat", "a prompt nobody recorded");
    let replay = ReplayChat::load(&fixture).expect("fixture parses");
    let gateway = Gateway::new(Arc::new(replay));
    match gateway.complete(&unseen) {
        Err(e) => println!("\nunrecorded request is refused: {e}"),
        Ok(_) => unreachable!("replay must not invent responses"),
    }

    let _ = std::fs::remove_file(&fixture);
}
