//! External clustering metrics and run-vs-run stability scoring.
//!
//! A predicted clustering (topic assignments) is compared against
//! ground-truth classes through a contingency table, from which Purity,
//! Inverse Purity, their per-class harmonic combination P1, the
//! Adjusted Rand Index, and Normalized Mutual Information are computed.
//! Stability scoring is the same machinery pointed at two runs of the
//! pipeline instead of a run and a gold standard. All functions are
//! pure; all iteration orders are canonical, so results never depend on
//! input order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::corpus::Corpus;

/// A hard partition: every item carries exactly one cluster label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    assignment: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("a clustering needs at least one item")]
    EmptyClustering,
    #[error(
        "item universes differ: {only_in_pred} item(s) only in the prediction \
         (e.g. {pred_example:?}), {only_in_truth} only in the truth (e.g. {truth_example:?})"
    )]
    UniverseMismatch {
        only_in_pred: usize,
        pred_example: String,
        only_in_truth: usize,
        truth_example: String,
    },
    #[error("document {0} has {1} topic entries; metrics need single-label assignments")]
    MultiLabel(String, usize),
    #[error("document {0} has no entries; metrics need single-label assignments")]
    NoLabel(String),
    #[error("document {0} has no ground-truth label")]
    Unlabeled(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: labels lines are `<id>\\t<class>`")]
    BadLabelLine { path: String, line: usize },
}

impl Clustering {
    pub fn new(assignment: BTreeMap<String, String>) -> Result<Self, MetricsError> {
        if assignment.is_empty() {
            return Err(MetricsError::EmptyClustering);
        }
        Ok(Self { assignment })
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self::new(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    /// Single-label view of an assignment run. Multi-label assignments
    /// are rejected: collapsing them silently would distort every metric.
    pub fn from_assignments(assignments: &[Assignment]) -> Result<Self, MetricsError> {
        let mut map = BTreeMap::new();
        for a in assignments {
            match a.entries.len() {
                0 => return Err(MetricsError::NoLabel(a.doc_id.clone())),
                1 => {
                    map.insert(a.doc_id.clone(), a.entries[0].label.clone());
                }
                n => return Err(MetricsError::MultiLabel(a.doc_id.clone(), n)),
            }
        }
        Self::new(map)
    }

    /// Ground-truth classes from a corpus whose documents carry labels.
    pub fn from_labeled_corpus(corpus: &Corpus) -> Result<Self, MetricsError> {
        let mut map = BTreeMap::new();
        for doc in corpus.documents() {
            match &doc.label {
                Some(label) => {
                    map.insert(doc.id.clone(), label.clone());
                }
                None => return Err(MetricsError::Unlabeled(doc.id.clone())),
            }
        }
        Self::new(map)
    }

    /// Argmax reduction for externally produced soft assignments: each
    /// item takes its highest-weight label (first wins ties).
    pub fn from_soft_assignments(
        soft: &BTreeMap<String, Vec<(String, f64)>>,
    ) -> Result<Self, MetricsError> {
        let mut map = BTreeMap::new();
        for (id, weights) in soft {
            let mut best: Option<&(String, f64)> = None;
            for candidate in weights {
                if best.map_or(true, |b| candidate.1 > b.1) {
                    best = Some(candidate);
                }
            }
            match best {
                Some((label, _)) => {
                    map.insert(id.clone(), label.clone());
                }
                None => return Err(MetricsError::NoLabel(id.clone())),
            }
        }
        Self::new(map)
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn label_of(&self, item: &str) -> Option<&str> {
        self.assignment.get(item).map(String::as_str)
    }

    pub fn items(&self) -> impl Iterator<Item = (&str, &str)> {
        self.assignment.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Distinct cluster labels, sorted.
    pub fn cluster_labels(&self) -> Vec<&str> {
        let mut labels: Vec<&str> = self.assignment.values().map(String::as_str).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}

/// Intersection counts between a predicted clustering (rows) and
/// ground-truth classes (columns), with marginals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

impl ContingencyTable {
    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Rows and columns exchanged (prediction and truth swap roles).
    pub fn transpose(&self) -> Self {
        let rows = self.counts.len();
        let cols = self.col_sums.len();
        let mut counts = vec![vec![0u64; rows]; cols];
        for (k, row) in self.counts.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                counts[j][k] = n;
            }
        }
        Self {
            counts,
            row_sums: self.col_sums.clone(),
            col_sums: self.row_sums.clone(),
            total: self.total,
        }
    }

    /// True when rows and columns pair off one-to-one: the partitions
    /// are identical up to relabeling.
    fn is_identical_partition(&self) -> bool {
        let rows_ok = self
            .counts
            .iter()
            .all(|row| row.iter().filter(|&&n| n > 0).count() == 1);
        let cols_ok = (0..self.col_sums.len())
            .all(|j| self.counts.iter().filter(|row| row[j] > 0).count() == 1);
        rows_ok && cols_ok
    }
}

/// Exact intersection counts over a shared item universe. Rows follow
/// the prediction's sorted labels, columns the truth's.
pub fn contingency(
    pred: &Clustering,
    truth: &Clustering,
) -> Result<ContingencyTable, MetricsError> {
    let only_in_pred: Vec<&str> = pred
        .assignment
        .keys()
        .filter(|k| !truth.assignment.contains_key(*k))
        .map(String::as_str)
        .collect();
    let only_in_truth: Vec<&str> = truth
        .assignment
        .keys()
        .filter(|k| !pred.assignment.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !only_in_pred.is_empty() || !only_in_truth.is_empty() {
        return Err(MetricsError::UniverseMismatch {
            only_in_pred: only_in_pred.len(),
            pred_example: only_in_pred.first().unwrap_or(&"").to_string(),
            only_in_truth: only_in_truth.len(),
            truth_example: only_in_truth.first().unwrap_or(&"").to_string(),
        });
    }

    let row_labels = pred.cluster_labels();
    let col_labels = truth.cluster_labels();
    let row_index: BTreeMap<&str, usize> =
        row_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let col_index: BTreeMap<&str, usize> =
        col_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    let mut counts = vec![vec![0u64; col_labels.len()]; row_labels.len()];
    for (item, pred_label) in pred.items() {
        let truth_label = truth.label_of(item).expect("universes match");
        counts[row_index[pred_label]][col_index[truth_label]] += 1;
    }
    let row_sums: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..col_labels.len())
        .map(|j| counts.iter().map(|row| row[j]).sum())
        .collect();
    let total = row_sums.iter().sum();
    Ok(ContingencyTable {
        counts,
        row_sums,
        col_sums,
        total,
    })
}

/// Fraction of items landing in their cluster's majority class:
/// Σ_k max_j n_kj, over N.
pub fn purity(table: &ContingencyTable) -> f64 {
    let hits: u64 = table
        .counts
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    hits as f64 / table.total as f64
}

/// Purity with prediction and truth exchanged: how fully each class is
/// recalled by its best-covering cluster.
pub fn inverse_purity(table: &ContingencyTable) -> f64 {
    purity(&table.transpose())
}

/// Per-class harmonic combination (P1): each class, weighted by size,
/// contributes its best F value over clusters, where
/// F(c_j, ω_k) = 2 n_kj / (|ω_k| + |c_j|).
pub fn harmonic_purity(table: &ContingencyTable) -> f64 {
    let n = table.total as f64;
    let mut weighted = 0.0;
    for (j, &class_size) in table.col_sums.iter().enumerate() {
        let mut best = 0.0f64;
        for (k, row) in table.counts.iter().enumerate() {
            let overlap = row[j] as f64;
            let denom = (table.row_sums[k] + class_size) as f64;
            let f = if overlap > 0.0 { 2.0 * overlap / denom } else { 0.0 };
            best = best.max(f);
        }
        // Sum class_size·best and divide once at the end: when every class
        // scores best = 1 the numerator adds exact integers to N, so
        // identical partitions land on exactly 1.0.
        weighted += class_size as f64 * best;
    }
    weighted / n
}

fn choose2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand Index via the pair-counting contingency form:
/// (Index − Expected) / (Max − Expected). The degenerate case where
/// Max = Expected is 1.0 for identical partitions, 0.0 otherwise.
pub fn adjusted_rand_index(table: &ContingencyTable) -> f64 {
    let index: f64 = table
        .counts
        .iter()
        .flat_map(|row| row.iter())
        .map(|&n| choose2(n))
        .sum();
    let sum_rows: f64 = table.row_sums.iter().map(|&n| choose2(n)).sum();
    let sum_cols: f64 = table.col_sums.iter().map(|&n| choose2(n)).sum();
    let pairs = choose2(table.total);
    let expected = if pairs > 0.0 { sum_rows * sum_cols / pairs } else { 0.0 };
    let max = 0.5 * (sum_rows + sum_cols);
    if (max - expected).abs() < f64::EPSILON * max.max(1.0) {
        return if table.is_identical_partition() { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

/// Normalized Mutual Information, I(Ω;C) / ((H(Ω)+H(C))/2), natural
/// logs, 0·log 0 = 0. Identical partitions score exactly 1.0; both
/// partitions collapsing to a single cluster is the identical case, so
/// the entropy-free degenerate branch below only guards division.
pub fn nmi(table: &ContingencyTable) -> f64 {
    // By definition, not by arithmetic: the entropy sums below can land
    // an ulp away from each other when cluster name order permutes the
    // summation order, and identity must not depend on that.
    if table.is_identical_partition() {
        return 1.0;
    }
    let n = table.total as f64;
    let entropy = |sums: &[u64]| -> f64 {
        sums.iter()
            .filter(|&&s| s > 0)
            .map(|&s| {
                let p = s as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&table.row_sums);
    let h_truth = entropy(&table.col_sums);
    if h_pred + h_truth == 0.0 {
        return 0.0;
    }
    let mut information = 0.0;
    for (k, row) in table.counts.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let joint = count as f64 / n;
            let product =
                (table.row_sums[k] as f64 / n) * (table.col_sums[j] as f64 / n);
            information += joint * (joint / product).ln();
        }
    }
    // The ratio is 1 and 0 exactly in theory; a few ulps of summation
    // error must not leak outside the documented range.
    (information / (0.5 * (h_pred + h_truth))).clamp(0.0, 1.0)
}

/// The three headline alignment numbers from one contingency table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub p1: f64,
    pub ari: f64,
    pub nmi: f64,
}

pub fn alignment_report(
    pred: &Clustering,
    truth: &Clustering,
) -> Result<AlignmentReport, MetricsError> {
    let table = contingency(pred, truth)?;
    Ok(AlignmentReport {
        p1: harmonic_purity(&table),
        ari: adjusted_rand_index(&table),
        nmi: nmi(&table),
    })
}

/// Read a tab-separated `<id>\t<class>` labels file.
pub fn read_labels_tsv(path: &Path) -> Result<BTreeMap<String, String>, MetricsError> {
    let content = fs::read_to_string(path).map_err(|e| MetricsError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut labels = BTreeMap::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, class) = line.split_once('\t').ok_or_else(|| MetricsError::BadLabelLine {
            path: path.display().to_string(),
            line: idx + 1,
        })?;
        let (id, class) = (id.trim(), class.trim());
        if id.is_empty() || class.is_empty() {
            return Err(MetricsError::BadLabelLine {
                path: path.display().to_string(),
                line: idx + 1,
            });
        }
        labels.insert(id.to_string(), class.to_string());
    }
    Ok(labels)
}
