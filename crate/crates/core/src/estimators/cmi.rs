//! Conditional mutual information I(A; theta | p) for discrete A, theta and a
//! scalar conditioning variable p.
//!
//! The kNN estimator is the mixed discrete-continuous nearest-neighbor kind:
//! joint distances use the max metric where discrete coordinates contribute 0
//! on a match and infinity on a mismatch, so the k-th neighbor radius rho_i is
//! the k-th smallest |p_i - p_j| among samples matching both discrete values.
//! With inclusive counts n_ap, n_tp, n_p within rho_i (and k~_i the inclusive
//! joint count, which exceeds k at ties and atoms), each sample contributes
//!
//!   psi(k~_i) - psi(n_ap_i) - psi(n_tp_i) + psi(n_p_i)
//!
//! On purely discrete data (p with atoms) this reduces to the plug-in
//! estimator; when A is constant the terms cancel exactly.

use super::{CmiEstimate, EstimatorError};

const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

/// psi at integer arguments 1..=n via the recurrence psi(m+1) = psi(m) + 1/m.
fn digamma_table(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    if n >= 1 {
        t[1] = -EULER_MASCHERONI;
    }
    for m in 1..n {
        t[m + 1] = t[m] + 1.0 / m as f64;
    }
    t
}

/// Mixed-variable kNN estimate of I(A; theta | p) in nats.
///
/// Deterministic: distance ties are resolved by inclusive counting, so no
/// tie-break dependence survives into the estimate.
pub fn knn_cmi(
    a: &[usize],
    theta: &[usize],
    p: &[f64],
    k: usize,
) -> Result<CmiEstimate, EstimatorError> {
    let n = a.len();
    if theta.len() != n || p.len() != n {
        return Err(EstimatorError::LengthMismatch);
    }
    if k < 1 || n <= k {
        return Err(EstimatorError::NotEnoughSamples { n, k });
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(EstimatorError::NonFinite("p".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| p[i].partial_cmp(&p[j]).unwrap().then(i.cmp(&j)));

    let psi = digamma_table(n);
    let mut total = 0.0;

    for r in 0..n {
        let i = order[r];
        // Walk outward in |delta p| order to find the k-th discrete-matching
        // neighbor; rho is its distance (None = fewer than k matches exist).
        let mut lo = r; // next candidate on the left is lo-1
        let mut hi = r; // next candidate on the right is hi+1
        let mut matches = 0usize;
        let mut rho: Option<f64> = None;
        loop {
            let left = if lo > 0 {
                Some(p[i] - p[order[lo - 1]])
            } else {
                None
            };
            let right = if hi + 1 < n {
                Some(p[order[hi + 1]] - p[i])
            } else {
                None
            };
            let take_left = match (left, right) {
                (None, None) => break,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some(l), Some(rgt)) => l <= rgt,
            };
            let j = if take_left {
                lo -= 1;
                order[lo]
            } else {
                hi += 1;
                order[hi]
            };
            if a[j] == a[i] && theta[j] == theta[i] {
                matches += 1;
                if matches == k {
                    rho = Some((p[j] - p[i]).abs());
                    break;
                }
            }
        }

        // Extend the window to everything within rho (inclusive); rho = None
        // means the window is the entire sample.
        match rho {
            Some(radius) => {
                while lo > 0 && p[i] - p[order[lo - 1]] <= radius {
                    lo -= 1;
                }
                while hi + 1 < n && p[order[hi + 1]] - p[i] <= radius {
                    hi += 1;
                }
            }
            None => {
                lo = 0;
                hi = n - 1;
            }
        }

        let mut k_joint = 0usize;
        let mut n_ap = 0usize;
        let mut n_tp = 0usize;
        let n_p = hi - lo; // window size excluding self
        for &j in &order[lo..=hi] {
            if j == i {
                continue;
            }
            let am = a[j] == a[i];
            let tm = theta[j] == theta[i];
            if am {
                n_ap += 1;
            }
            if tm {
                n_tp += 1;
            }
            if am && tm {
                k_joint += 1;
            }
        }
        total += psi[k_joint.max(1)] - psi[n_ap.max(1)] - psi[n_tp.max(1)] + psi[n_p.max(1)];
    }

    Ok(CmiEstimate {
        value: total / n as f64,
        k,
        n,
    })
}

/// Plug-in CMI for fully discrete triples:
/// sum over cells of P(a,t,p) * ln[ P(a,t|p) / (P(a|p) P(t|p)) ].
///
/// Exactly zero whenever A and theta are conditionally independent in the
/// empirical table. This is the brute-force oracle for [`knn_cmi`] on
/// discretized constructions.
pub fn plugin_cmi(
    a: &[usize],
    theta: &[usize],
    p_discrete: &[usize],
) -> Result<f64, EstimatorError> {
    let n = a.len();
    if theta.len() != n || p_discrete.len() != n {
        return Err(EstimatorError::LengthMismatch);
    }
    if n == 0 {
        return Err(EstimatorError::EmptyInput);
    }
    use std::collections::BTreeMap;
    let mut c_atp: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
    let mut c_ap: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut c_tp: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut c_p: BTreeMap<usize, u64> = BTreeMap::new();
    for i in 0..n {
        *c_atp.entry((a[i], theta[i], p_discrete[i])).or_insert(0) += 1;
        *c_ap.entry((a[i], p_discrete[i])).or_insert(0) += 1;
        *c_tp.entry((theta[i], p_discrete[i])).or_insert(0) += 1;
        *c_p.entry(p_discrete[i]).or_insert(0) += 1;
    }
    let mut total = 0.0;
    for (&(av, tv, pv), &count) in &c_atp {
        let num = count as f64 * c_p[&pv] as f64;
        let den = c_ap[&(av, pv)] as f64 * c_tp[&(tv, pv)] as f64;
        if num != den {
            total += count as f64 / n as f64 * (num / den).ln();
        }
    }
    Ok(total)
}
