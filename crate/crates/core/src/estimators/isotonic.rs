//! Isotonic regression by pool-adjacent-violators, used to post-calibrate
//! elicited beliefs before re-running the conditional-independence test.

use super::EstimatorError;
use serde::{Deserialize, Serialize};

/// A nondecreasing step function: the fitted level of the largest knot <= x
/// (first level below the first knot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicFit {
    pub knots: Vec<f64>,
    pub levels: Vec<f64>,
}

impl IsotonicFit {
    pub fn predict(&self, x: f64) -> f64 {
        match self.knots.binary_search_by(|k| k.partial_cmp(&x).unwrap()) {
            Ok(i) => self.levels[i],
            Err(0) => self.levels[0],
            Err(i) => self.levels[i - 1],
        }
    }

    pub fn sse(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(xi, yi)| {
                let d = yi - self.predict(*xi);
                d * d
            })
            .sum()
    }
}

/// Least-squares nondecreasing fit of y on x (PAVA). Points sharing an x are
/// pooled first, since a function must give them one value.
pub fn isotonic_fit(x: &[f64], y: &[f64]) -> Result<IsotonicFit, EstimatorError> {
    if x.len() != y.len() {
        return Err(EstimatorError::LengthMismatch);
    }
    if x.is_empty() {
        return Err(EstimatorError::EmptyInput);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite("isotonic input".into()));
    }

    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap().then(i.cmp(&j)));

    // Pool duplicates in x.
    let mut knots: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &i in &order {
        if knots.last() == Some(&x[i]) {
            *sums.last_mut().unwrap() += y[i];
            *weights.last_mut().unwrap() += 1.0;
        } else {
            knots.push(x[i]);
            sums.push(y[i]);
            weights.push(1.0);
        }
    }

    // PAVA over blocks (sum, weight, span of knots).
    struct Block {
        sum: f64,
        weight: f64,
        end: usize, // exclusive knot index
    }
    let mut stack: Vec<Block> = Vec::with_capacity(knots.len());
    for i in 0..knots.len() {
        stack.push(Block {
            sum: sums[i],
            weight: weights[i],
            end: i + 1,
        });
        while stack.len() >= 2 {
            let last = stack.len() - 1;
            let mean_prev = stack[last - 1].sum / stack[last - 1].weight;
            let mean_last = stack[last].sum / stack[last].weight;
            if mean_prev <= mean_last {
                break;
            }
            let Block { sum, weight, end } = stack.pop().unwrap();
            let prev = stack.last_mut().unwrap();
            prev.sum += sum;
            prev.weight += weight;
            prev.end = end;
        }
    }

    let mut levels = vec![0.0; knots.len()];
    let mut start = 0usize;
    for block in &stack {
        let mean = block.sum / block.weight;
        for level in levels.iter_mut().take(block.end).skip(start) {
            *level = mean;
        }
        start = block.end;
    }
    Ok(IsotonicFit { knots, levels })
}
