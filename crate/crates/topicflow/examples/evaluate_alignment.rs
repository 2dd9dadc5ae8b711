//! Score a predicted clustering against ground truth, five ways.
//!
//! The metrics all come off one contingency table:
//!
//! * purity: map each predicted cluster to its majority class;
//! * inverse purity: the transpose (classes mapped to clusters);
//! * P1: class-weighted best-match F measure of the two;
//! * ARI: pair-counting agreement, corrected for chance;
//! * NMI: mutual information over mean entropy.
//!
//! Run with: cargo run --example evaluate_alignment

use std::collections::BTreeMap;

use topicflow::metrics::{
    adjusted_rand_index, alignment_report, contingency, harmonic_purity, inverse_purity, nmi,
    purity, Clustering,
};

fn labeled(pairs: &[(&str, &str)]) -> Clustering {
    let map: BTreeMap<String, String> = pairs
        .iter()
        .map(|(id, label)| (id.to_string(), label.to_string()))
        .collect();
    Clustering::new(map).expect("nonempty")
}

fn main() {
    // Eight documents; the prediction splits one true class in two and
    // contaminates another.
    let truth = labeled(&[
        ("d1", "sports"),
        ("d2", "sports"),
        ("d3", "sports"),
        ("d4", "sports"),
        ("d5", "politics"),
        ("d6", "politics"),
        ("d7", "politics"),
        ("d8", "politics"),
    ]);
    let predicted = labeled(&[
        ("d1", "Athletics"),
        ("d2", "Athletics"),
        ("d3", "Games"),
        ("d4", "Games"),
        ("d5", "Government"),
        ("d6", "Government"),
        ("d7", "Government"),
        ("d8", "Athletics"),
    ]);

    let table = contingency(&predicted, &truth).expect("same documents");
    println!("purity         : {:.4}", purity(&table));
    println!("inverse purity : {:.4}", inverse_purity(&table));
    println!("harmonic P1    : {:.4}", harmonic_purity(&table));
    println!("ARI            : {:.4}", adjusted_rand_index(&table));
    println!("NMI            : {:.4}", nmi(&table));

    // Two identical runs align perfectly; that is the stability
    // baseline a deterministic pipeline must hit.
    let rerun = predicted.clone();
    let report = alignment_report(&predicted, &rerun).expect("same documents");
    println!(
        "\nself-alignment (stability fixed point): P1 {:.1}, ARI {:.1}, NMI {:.1}",
        report.p1, report.ari, report.nmi
    );
}
