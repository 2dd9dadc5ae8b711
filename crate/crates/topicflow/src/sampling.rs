//! Sample-size planning for topic generation.
//!
//! Running generation over a full corpus is wasteful when most documents
//! repeat already-seen topics. If every topic worth keeping covers at least
//! `n_d` documents of an `N`-document corpus, there can be at most
//! `K_u = floor(N / n_d)` such topics. Drawing `n_s` documents uniformly
//! then spreads them over at most `K_u` cells, `c ~ Multi(n_s, K_u)`, and
//! the chance that some topic is entirely missed, `P(min_k c_k = 0)`, can
//! be estimated by simulation. [`recommend_sample_size`] picks the `n_s`
//! whose miss probability sits closest to a caller-chosen tolerance ε.
//!
//! The drought rule is the complementary runtime stop: if no new topic has
//! appeared for a threshold number of documents, generation halts early.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Output of [`recommend_sample_size`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizePlan {
    /// N, corpus size.
    pub corpus_size: usize,
    /// n_d, the smallest document count a topic must reach to matter.
    pub min_topic_docs: usize,
    /// K_u = floor(N / n_d), the implied cap on the number of topics.
    pub topic_upper_bound: usize,
    /// n_s, the recommended sample size.
    pub sample_size: usize,
    /// ε, the target miss probability.
    pub epsilon: f64,
    /// p* = |P(min_k c_k = 0) − ε| at the recommended n_s.
    pub p_star: f64,
}

/// Counter for the early-stop rule during generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DroughtState {
    pub docs_since_new_topic: usize,
    pub threshold: usize,
}

impl DroughtState {
    pub fn new(threshold: usize) -> Self {
        Self {
            docs_since_new_topic: 0,
            threshold,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("min_topic_docs {n_d} out of range for corpus of {n} documents")]
    TopicDocsOutOfRange { n_d: usize, n: usize },
    #[error("search_max must be at least 1")]
    EmptySearchRange,
    #[error("epsilon {0} outside [0, 1]")]
    EpsilonOutOfRange(f64),
    #[error("trials must be at least 1")]
    NoTrials,
}

/// Expected number of empty cells under `c ~ Multi(n_s, K_u)` with uniform
/// cell probabilities: `K_u · (1 − 1/K_u)^{n_s}`, evaluated in log space so
/// large `n_s` cannot underflow the power term prematurely.
pub fn expected_zero_cells(n_s: usize, k_u: usize) -> f64 {
    assert!(n_s >= 1, "n_s must be at least 1");
    assert!(k_u >= 1, "K_u must be at least 1");
    let k = k_u as f64;
    // ln(K) + n_s·ln(1 − 1/K); K_u = 1 gives ln(0) = −inf and a clean 0.
    let log_value = k.ln() + n_s as f64 * (-1.0 / k).ln_1p();
    log_value.exp()
}

/// Monte Carlo estimate of `P(min_k c_k = 0)`: the probability that at
/// least one of `K_u` equally likely cells receives none of `n_s` draws.
///
/// Trials run sequentially on a single ChaCha8 stream, so a fixed seed
/// fixes the estimate exactly. A trial short-circuits once every cell is
/// occupied; skipped draws never affect the outcome, only stream position,
/// which stays a pure function of the seed.
pub fn min_empty_probability(n_s: usize, k_u: usize, trials: usize, seed: u64) -> f64 {
    assert!(n_s >= 1, "n_s must be at least 1");
    assert!(k_u >= 1, "K_u must be at least 1");
    assert!(trials >= 1 && trials < u32::MAX as usize, "trials out of range");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Generation stamps avoid reclearing the occupancy table every trial.
    let mut stamp = vec![0u32; k_u];
    let mut with_empty = 0usize;
    for trial in 1..=trials as u32 {
        let mut occupied = 0usize;
        for _ in 0..n_s {
            let cell = rng.gen_range(0..k_u);
            if stamp[cell] != trial {
                stamp[cell] = trial;
                occupied += 1;
                if occupied == k_u {
                    break;
                }
            }
        }
        if occupied < k_u {
            with_empty += 1;
        }
    }
    with_empty as f64 / trials as f64
}

/// Stream key for one search candidate. Keying the stream on (seed, n_s)
/// rather than sharing one stream makes the reported plan independent of
/// the order in which the search visits candidates.
fn candidate_seed(seed: u64, n_s: usize) -> u64 {
    seed ^ (n_s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Find the `n_s` in `[1, search_max]` minimizing
/// `p* = |P(min_k c_k = 0) − ε|`, smallest `n_s` winning ties.
///
/// `P` is monotone nonincreasing in `n_s`, so the search evaluates a coarse
/// grid first and then every candidate between the best grid point's
/// neighbors. Estimates are cached per candidate; with per-candidate
/// streams the two phases agree wherever they overlap.
pub fn recommend_sample_size(
    corpus_size: usize,
    min_topic_docs: usize,
    epsilon: f64,
    search_max: usize,
    trials: usize,
    seed: u64,
) -> Result<SampleSizePlan, SamplingError> {
    if min_topic_docs == 0 || min_topic_docs > corpus_size {
        return Err(SamplingError::TopicDocsOutOfRange {
            n_d: min_topic_docs,
            n: corpus_size,
        });
    }
    if search_max == 0 {
        return Err(SamplingError::EmptySearchRange);
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(SamplingError::EpsilonOutOfRange(epsilon));
    }
    if trials == 0 {
        return Err(SamplingError::NoTrials);
    }

    let k_u = corpus_size / min_topic_docs;
    let mut cache: HashMap<usize, f64> = HashMap::new();
    let p_star_at = |n_s: usize, cache: &mut HashMap<usize, f64>| -> f64 {
        let p = *cache
            .entry(n_s)
            .or_insert_with(|| min_empty_probability(n_s, k_u, trials, candidate_seed(seed, n_s)));
        (p - epsilon).abs()
    };

    let step = (search_max / 64).max(1);
    let mut grid: Vec<usize> = (1..=search_max).step_by(step).collect();
    if *grid.last().expect("grid nonempty") != search_max {
        grid.push(search_max);
    }

    let mut best_idx = 0;
    let mut best_p = f64::INFINITY;
    for (i, &n_s) in grid.iter().enumerate() {
        let p = p_star_at(n_s, &mut cache);
        if p < best_p {
            best_p = p;
            best_idx = i;
        }
    }

    // Refine between the best grid point's neighbors.
    let lo = if best_idx > 0 { grid[best_idx - 1] } else { 1 };
    let hi = grid.get(best_idx + 1).copied().unwrap_or(search_max);
    let mut best_n = grid[best_idx];
    let mut best_p_star = best_p;
    for n_s in lo..=hi {
        let p = p_star_at(n_s, &mut cache);
        if p < best_p_star || (p == best_p_star && n_s < best_n) {
            best_p_star = p;
            best_n = n_s;
        }
    }

    Ok(SampleSizePlan {
        corpus_size,
        min_topic_docs,
        topic_upper_bound: k_u,
        sample_size: best_n,
        epsilon,
        p_star: best_p_star,
    })
}

/// Advance the drought counter after one generated document.
///
/// A response introducing at least one new topic resets the counter to
/// zero; a barren response increments it. `stop` turns true as soon as the
/// counter reaches the threshold.
pub fn drought_update(state: DroughtState, new_topics_in_response: usize) -> (DroughtState, bool) {
    let docs_since_new_topic = if new_topics_in_response > 0 {
        0
    } else {
        state.docs_since_new_topic + 1
    };
    let next = DroughtState {
        docs_since_new_topic,
        threshold: state.threshold,
    };
    let stop = next.docs_since_new_topic >= next.threshold;
    (next, stop)
}
