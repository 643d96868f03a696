//! Exact one-sided tests for comparing two proportions.

use super::{ContingencyTable2x2, EstimatorError};

/// One-sided Fisher exact p-value for H0: row-1's first-column share is <=
/// row-2's, against the observed excess. Equals the upper hypergeometric tail
/// P(X >= a) with all margins fixed.
///
/// The pmf is built by outward ratio recurrence from the mode, which keeps
/// every intermediate in [0, 1] and the result within ~1e-13 of exact
/// rational enumeration for totals in the hundreds.
pub fn fisher_exact_one_sided(t: &ContingencyTable2x2) -> Result<f64, EstimatorError> {
    let total = t.total();
    if total == 0 {
        return Err(EstimatorError::AllZeroTable);
    }
    let n = total as i64;
    let row1 = (t.a + t.b) as i64;
    let col1 = (t.a + t.c) as i64;
    let lo = 0.max(row1 + col1 - n);
    let hi = row1.min(col1);
    if lo == hi {
        return Ok(1.0);
    }

    // pmf(x+1)/pmf(x) for X ~ Hypergeom(n, col1, row1)
    let ratio_up = |x: i64| -> f64 {
        ((row1 - x) as f64 * (col1 - x) as f64)
            / ((x + 1) as f64 * (n - col1 - row1 + x + 1) as f64)
    };

    let mode = (((row1 + 1) as f64 * (col1 + 1) as f64) / (n + 2) as f64).floor() as i64;
    let mode = mode.clamp(lo, hi);

    let len = (hi - lo + 1) as usize;
    let mut pmf = vec![0.0f64; len];
    let at = |x: i64| (x - lo) as usize;
    pmf[at(mode)] = 1.0;
    for x in mode..hi {
        pmf[at(x + 1)] = pmf[at(x)] * ratio_up(x);
    }
    for x in (lo..mode).rev() {
        pmf[at(x)] = pmf[at(x + 1)] / ratio_up(x);
    }
    let mass: f64 = pmf.iter().sum();
    let observed = t.a as i64;
    let tail: f64 = pmf[at(observed.clamp(lo, hi))..].iter().sum();
    Ok((tail / mass).clamp(0.0, 1.0))
}

/// One-sided binomial alternative (offered behind a flag): tests row 1's
/// first-column count against the pooled share, P(Bin(n1, pooled) >= a).
/// An approximation to the conditional test, not exact under fixed margins.
pub fn binomial_one_sided(t: &ContingencyTable2x2) -> Result<f64, EstimatorError> {
    let total = t.total();
    if total == 0 {
        return Err(EstimatorError::AllZeroTable);
    }
    let n1 = t.a + t.b;
    if n1 == 0 {
        return Ok(1.0);
    }
    let pooled = (t.a + t.c) as f64 / total as f64;
    if pooled <= 0.0 {
        return Ok(if t.a == 0 { 1.0 } else { 0.0 });
    }
    if pooled >= 1.0 {
        return Ok(1.0);
    }
    // P(X >= a) via pmf recurrence from 0.
    let n1f = n1 as f64;
    let mut pmf = (1.0 - pooled).powf(n1f);
    let mut cdf_below = 0.0;
    for x in 0..t.a {
        cdf_below += pmf;
        let xf = x as f64;
        pmf *= (n1f - xf) / (xf + 1.0) * pooled / (1.0 - pooled);
    }
    Ok((1.0 - cdf_below).clamp(0.0, 1.0))
}
