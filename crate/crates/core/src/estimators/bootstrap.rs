//! Percentile bootstrap and local-permutation calibration.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{knn_cmi, BootstrapCI, EstimatorError};
use crate::rng::{substream, tag};

/// One sampling unit per record; use when the data carries no groups.
pub fn singleton_units(n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|i| vec![i]).collect()
}

/// Percentile bootstrap CI of `stat` over resampled units.
///
/// Units are whole groups of record indices drawn with replacement (pass
/// [`singleton_units`] for per-record resampling). A replicate whose statistic
/// fails is retried with a fresh deterministic draw, at most 10 times.
/// Replicates run in parallel; each derives its own substream, so the result
/// does not depend on thread count.
pub fn bootstrap_ci<F>(
    stat: F,
    units: &[Vec<usize>],
    replicates: usize,
    level: f64,
    rng_seed: u64,
) -> Result<BootstrapCI, EstimatorError>
where
    F: Fn(&[usize]) -> Result<f64, EstimatorError> + Sync,
{
    if units.is_empty() {
        return Err(EstimatorError::EmptyInput);
    }
    if replicates == 0 {
        return Err(EstimatorError::InvalidConfig(
            "replicates must be >= 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(EstimatorError::InvalidConfig(format!(
            "level {level} not in (0,1)"
        )));
    }

    let values: Result<Vec<f64>, EstimatorError> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut last_err = String::new();
            for attempt in 0..10u64 {
                let mut rng = substream(rng_seed, tag::BOOTSTRAP, (attempt << 32) | r as u64);
                let mut indices = Vec::new();
                for _ in 0..units.len() {
                    let u = rng.gen_range(0..units.len());
                    indices.extend_from_slice(&units[u]);
                }
                match stat(&indices) {
                    Ok(v) => return Ok(v),
                    Err(e) => last_err = e.to_string(),
                }
            }
            Err(EstimatorError::StatisticFailed {
                replicate: r,
                attempts: 10,
                reason: last_err,
            })
        })
        .collect();
    let mut values = values?;
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let alpha = 1.0 - level;
    Ok(BootstrapCI {
        lower: percentile(&values, alpha / 2.0),
        upper: percentile(&values, 1.0 - alpha / 2.0),
        level,
        replicates,
    })
}

/// Linear-interpolation percentile of a sorted slice (the R-7 convention).
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

/// Consecutive blocks over positions sorted by p; the unit of local shuffling.
fn blocks_of(len: usize, block: usize) -> Vec<(usize, usize)> {
    let block = block.max(2);
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + block).min(len);
        out.push((start, end));
        start = end;
    }
    // a trailing singleton cannot be shuffled; absorb it into its neighbor
    if out.len() >= 2 && out.last().unwrap().1 - out.last().unwrap().0 < 2 {
        let (s, e) = out.pop().unwrap();
        out.last_mut().unwrap().1 = e;
        let _ = s;
    }
    out
}

/// Ranks from a seeded shuffle. Ties in p must be broken by something
/// unrelated to the data: input order often tracks the ground truth (e.g.
/// stratified contexts come out posterior-sorted), and index tie-breaking
/// would then keep tied samples next to their ground-truth neighbors and
/// drain the test's power.
fn tiebreak_ranks(n: usize, rng_seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut substream(rng_seed, tag::PERMUTATION, u64::MAX));
    let mut rank = vec![0usize; n];
    for (r, &i) in perm.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Local-permutation p-value for H0: I(A; theta | p) = 0.
///
/// Each permutation shuffles theta only within small neighborhoods of
/// consecutive samples in sorted-p order (blocks of k+1), preserving the
/// theta | p relationship under the null. p-value uses the add-one rule
/// (1 + #{permuted >= observed}) / (n_perm + 1). Deterministic given the seed.
pub fn local_permutation_pvalue(
    a: &[usize],
    theta: &[usize],
    p: &[f64],
    k: usize,
    n_perm: usize,
    rng_seed: u64,
) -> Result<f64, EstimatorError> {
    let observed = knn_cmi(a, theta, p, k)?.value;
    let n = a.len();
    let rank = tiebreak_ranks(n, rng_seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| p[i].partial_cmp(&p[j]).unwrap().then(rank[i].cmp(&rank[j])));
    let blocks = blocks_of(n, k + 1);

    let exceed: Result<Vec<bool>, EstimatorError> = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(rng_seed, tag::PERMUTATION, r as u64);
            let mut shuffled = theta.to_vec();
            for &(s, e) in &blocks {
                let mut vals: Vec<usize> = order[s..e].iter().map(|&i| theta[i]).collect();
                vals.shuffle(&mut rng);
                for (slot, v) in order[s..e].iter().zip(vals) {
                    shuffled[*slot] = v;
                }
            }
            Ok(knn_cmi(a, &shuffled, p, k)?.value >= observed)
        })
        .collect();
    let count = exceed?.iter().filter(|x| **x).count();
    Ok((1 + count) as f64 / (n_perm + 1) as f64)
}

/// Grouped variant: when the outcome is constant within each context group
/// (one covariate-outcome pairing elicited repeatedly), record-level shuffling
/// would break the within-group structure, so whole groups swap outcomes with
/// neighboring groups in mean-belief order instead.
pub fn grouped_local_permutation_pvalue(
    a: &[usize],
    theta: &[usize],
    p: &[f64],
    groups: &[Vec<usize>],
    k: usize,
    n_perm: usize,
    rng_seed: u64,
) -> Result<f64, EstimatorError> {
    for g in groups {
        if g.is_empty() {
            return Err(EstimatorError::EmptyInput);
        }
        if g.iter().any(|&i| theta[i] != theta[g[0]]) {
            // theta varies within a group: fall back to record-level shuffling
            return local_permutation_pvalue(a, theta, p, k, n_perm, rng_seed);
        }
    }
    let observed = knn_cmi(a, theta, p, k)?.value;

    let rank = tiebreak_ranks(groups.len(), rng_seed);
    let mut group_order: Vec<usize> = (0..groups.len()).collect();
    let mean_p: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|&i| p[i]).sum::<f64>() / g.len() as f64)
        .collect();
    group_order.sort_by(|&i, &j| {
        mean_p[i]
            .partial_cmp(&mean_p[j])
            .unwrap()
            .then(rank[i].cmp(&rank[j]))
    });
    let blocks = blocks_of(groups.len(), k + 1);

    let exceed: Result<Vec<bool>, EstimatorError> = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(rng_seed, tag::PERMUTATION, r as u64);
            let mut shuffled = theta.to_vec();
            for &(s, e) in &blocks {
                let mut vals: Vec<usize> = group_order[s..e]
                    .iter()
                    .map(|&g| theta[groups[g][0]])
                    .collect();
                vals.shuffle(&mut rng);
                for (&g, v) in group_order[s..e].iter().zip(vals) {
                    for &i in &groups[g] {
                        shuffled[i] = v;
                    }
                }
            }
            Ok(knn_cmi(a, &shuffled, p, k)?.value >= observed)
        })
        .collect();
    let count = exceed?.iter().filter(|x| **x).count();
    Ok((1 + count) as f64 / (n_perm + 1) as f64)
}
