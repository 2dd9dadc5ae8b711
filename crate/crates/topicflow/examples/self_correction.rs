//! Watch the assignment retry loop absorb bad model responses.
//!
//! The chat mock is scripted to misbehave twice before cooperating:
//!
//! 1. a topic label that is not in the list (hallucination);
//! 2. a bare "None" (invalid: the document plainly fits a topic);
//! 3. a valid assignment with a verifiable quote.
//!
//! The loop retries after each rejection, naming the error kind in the
//! correction prompt and reshuffling the topic list under a seeded
//! permutation, and resolves on attempt 3. The rejected attempts stay
//! visible on the outcome for auditing.
//!
//! Run with: cargo run --example self_correction

use std::sync::Arc;

use topicflow::assignment::{assign_with_correction, AssignConfig};
use topicflow::gateway::mock::MockChat;
use topicflow::topics::{Topic, TopicList};
use topicflow::{Document, Gateway};

fn main() {
    let doc = Document {
        id: "doc-0".into(),
        text: "The committee reviewed harbor dredging contracts and approved \
               new funding for coastal infrastructure maintenance."
            .into(),
        label: None,
    };
    let topics = TopicList::from_topics(vec![
        Topic::new(1, "Infrastructure", "Mentions construction and maintenance of public works.")
            .unwrap(),
        Topic::new(1, "Education", "Mentions schools, curricula, and students.").unwrap(),
    ])
    .expect("unique labels");

    let chat = MockChat::new().with_script([
        // Attempt 1: hallucinated label.
        "[1] Maritime Law: Mentions shipping disputes (\"harbor dredging contracts\")",
        // Attempt 2: refuses to assign.
        "None",
        // Attempt 3: valid topic from the list, quote present in the text.
        "[1] Infrastructure: Approves public works spending (\"approved new funding for \
         coastal infrastructure maintenance\")",
    ]);
    let gateway = Gateway::new(Arc::new(chat));

    let mut config = AssignConfig::new("mock-chat");
    config.seed = 17;
    config.retry_limit = 10;

    let outcome = assign_with_correction(&doc, &topics, &gateway, &config).expect("scripted run");

    println!("rejected attempts:");
    for (i, failure) in outcome.failures.iter().enumerate() {
        println!("  attempt {}: {} ({})", i + 1, failure.kind, failure.detail);
    }

    match &outcome.outcome {
        Ok(assignment) => {
            let entry = &assignment.entries[0];
            println!("\nresolved on attempt {}:", assignment.attempts);
            println!("  topic : {}", entry.label);
            println!("  quote : \"{}\"", entry.quote);
        }
        Err(failure) => println!("\nexhausted retries: {failure}"),
    }
}
