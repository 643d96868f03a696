//! Monotone pairwise choice test.
//!
//! For a random-utility maximizer the pairwise share of one action over
//! another is monotone in the belief, so after discretizing beliefs into
//! quantile bins, a higher-belief bin can never have a significantly lower
//! share. Inverted bin pairs get a one-sided exact test; the result reports
//! the fraction of pairwise comparisons with significant violations.

use serde::{Deserialize, Serialize};

use super::{extract, AuditError};
use crate::estimators::{binomial_one_sided, fisher_exact_one_sided, ContingencyTable2x2};
use crate::records::{ActionLabel, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    /// Mean belief of the bin's pair-records.
    pub center: f64,
    pub count_a1: u64,
    pub count_a2: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedPair {
    /// Lower-belief bin index (into `bins`).
    pub j: usize,
    /// Higher-belief bin index.
    pub k: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneTestResult {
    pub pair: (ActionLabel, ActionLabel),
    /// Nonempty bins in center order (empty quantile cells are merged away).
    pub bins: Vec<BinSummary>,
    /// Share of the first action among the pair, per bin.
    pub shares: Vec<f64>,
    /// Inverted pairs (share_j > share_k for j < k) with one-sided p-values.
    pub flagged: Vec<FlaggedPair>,
    /// #{flagged with p < alpha} / (K(K-1)/2) over the effective bins.
    pub significant_violation_rate: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MonotoneConfig {
    pub pair: (ActionLabel, ActionLabel),
    pub bins: usize,
    pub alpha: f64,
    /// Use the one-sided binomial approximation instead of Fisher's exact test.
    pub use_binomial: bool,
}

impl Default for MonotoneConfig {
    fn default() -> Self {
        MonotoneConfig {
            pair: (ActionLabel::Yes, ActionLabel::No),
            bins: 5,
            alpha: 0.05,
            use_binomial: false,
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Quantile-bin the pair's beliefs, flag share inversions across bins, and
/// test each with a one-sided exact test at the configured alpha.
///
/// `_rng_seed` is accepted for interface symmetry; the procedure is
/// deterministic.
pub fn monotone_pairwise_test(
    d: &Dataset,
    cfg: &MonotoneConfig,
    _rng_seed: u64,
) -> Result<MonotoneTestResult, AuditError> {
    assert!(cfg.bins >= 2, "need at least 2 bins");
    let (a1, a2) = cfg.pair;
    let ex = extract(d)?;

    // Pair-relevant records only; deferred and other actions drop out here.
    let mut pair_beliefs: Vec<f64> = Vec::new();
    let mut pair_is_a1: Vec<bool> = Vec::new();
    for i in 0..ex.actions.len() {
        let action = ActionLabel::ALL[ex.actions[i]];
        if action == a1 || action == a2 {
            pair_beliefs.push(ex.beliefs[i]);
            pair_is_a1.push(action == a1);
        }
    }
    let mut notes = Vec::new();
    if pair_beliefs.is_empty() {
        return Ok(MonotoneTestResult {
            pair: cfg.pair,
            bins: vec![],
            shares: vec![],
            flagged: vec![],
            significant_violation_rate: 0.0,
            notes: vec![format!("no records choose {} or {}", a1, a2)],
        });
    }

    let mut sorted = pair_beliefs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let edges: Vec<f64> = (1..cfg.bins)
        .map(|i| percentile(&sorted, i as f64 / cfg.bins as f64))
        .collect();

    let mut bin_counts: Vec<(u64, u64)> = vec![(0, 0); cfg.bins];
    let mut bin_belief_sum = vec![0.0; cfg.bins];
    for (b, is_a1) in pair_beliefs.iter().zip(&pair_is_a1) {
        let bin = edges.partition_point(|e| e < b);
        if *is_a1 {
            bin_counts[bin].0 += 1;
        } else {
            bin_counts[bin].1 += 1;
        }
        bin_belief_sum[bin] += b;
    }

    // Empty quantile cells (belief atoms straddling edges) merge away.
    let mut bins = Vec::new();
    for (i, (ca1, ca2)) in bin_counts.iter().enumerate() {
        let total = ca1 + ca2;
        if total == 0 {
            notes.push(format!("bin {i} empty, merged into its neighbor"));
            continue;
        }
        bins.push(BinSummary {
            center: bin_belief_sum[i] / total as f64,
            count_a1: *ca1,
            count_a2: *ca2,
        });
    }
    let k_eff = bins.len();
    let shares: Vec<f64> = bins
        .iter()
        .map(|b| b.count_a1 as f64 / (b.count_a1 + b.count_a2) as f64)
        .collect();

    let mut flagged = Vec::new();
    let mut significant = 0usize;
    for j in 0..k_eff {
        for k in (j + 1)..k_eff {
            if shares[j] > shares[k] {
                let table = ContingencyTable2x2 {
                    a: bins[j].count_a1,
                    b: bins[j].count_a2,
                    c: bins[k].count_a1,
                    d: bins[k].count_a2,
                };
                let p_value = if cfg.use_binomial {
                    binomial_one_sided(&table)?
                } else {
                    fisher_exact_one_sided(&table)?
                };
                if p_value < cfg.alpha {
                    significant += 1;
                }
                flagged.push(FlaggedPair { j, k, p_value });
            }
        }
    }
    let comparisons = k_eff * k_eff.saturating_sub(1) / 2;
    let significant_violation_rate = if comparisons == 0 {
        notes.push("fewer than 2 effective bins; no comparisons".into());
        0.0
    } else {
        significant as f64 / comparisons as f64
    };

    Ok(MonotoneTestResult {
        pair: cfg.pair,
        bins,
        shares,
        flagged,
        significant_violation_rate,
        notes,
    })
}
