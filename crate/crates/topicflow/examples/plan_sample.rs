//! Size a generation sample before spending model calls on it.
//!
//! The planner bounds how many topics a corpus could plausibly hold
//! (corpus size / fewest documents an interesting topic needs), then
//! searches for the smallest sample whose probability of completely
//! missing such a topic stays below epsilon, estimating that
//! probability with seeded Monte Carlo trials.
//!
//! Run with: cargo run --example plan_sample

use topicflow::corpus::sample;
use topicflow::sampling::recommend_sample_size;
use topicflow::{Corpus, Document};

fn main() {
    // A synthetic 5000-document corpus. Any JSONL corpus loaded with
    // corpus::load_corpus works the same way.
    let docs: Vec<Document> = (0..5000)
        .map(|i| Document {
            id: format!("doc-{i:04}"),
            text: format!("Synthetic article number {i} about one of the corpus themes."),
            label: None,
        })
        .collect();
    let corpus = Corpus::from_documents(docs, "synthetic");

    // Suppose a topic is only worth modeling if at least 50 documents
    // carry it, and we accept a 0.5% chance of a sample that misses
    // one such topic entirely.
    let min_topic_docs = 50;
    let epsilon = 0.005;
    let plan = recommend_sample_size(corpus.len(), min_topic_docs, epsilon, corpus.len(), 10_000, 17)
        .expect("valid planning bounds");

    println!("corpus size        : {}", plan.corpus_size);
    println!("rarest topic needs : {} documents", plan.min_topic_docs);
    println!("topic upper bound  : {}", plan.topic_upper_bound);
    println!("epsilon            : {}", plan.epsilon);
    println!("recommended sample : {}", plan.sample_size);
    println!("achieved |p - eps| : {:.6}", plan.p_star);

    // Draw the sample the plan recommends. The same seed always draws
    // the same documents.
    let (sampled, rest) = sample(&corpus, plan.sample_size, 17).expect("sample fits corpus");
    println!(
        "drew {} documents, {} remain for assignment-only runs",
        sampled.len(),
        rest.len()
    );
    println!("first sampled id   : {}", sampled.documents()[0].id);
}
