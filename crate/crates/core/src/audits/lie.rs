//! Law-of-iterated-expectation coherence.
//!
//! A coherent reported distribution satisfies
//! P(state | x) = sum_j P(state | x, z in B_j) * P(z in B_j | x) for any
//! partition of an auxiliary variable z. The test reports the absolute
//! residual per context and the median of residual/base ratios with a
//! bootstrap CI; an oracle-trained bagged-tree regressor supplies the
//! comparison baseline (how much residual honest estimation error alone
//! would produce).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AuditError;
use crate::bayesnet::{BayesNet, ContextAssignment};
use crate::estimators::{bootstrap_ci, BaggedTreeRegressor, BootstrapCI};
use crate::records::{LieTriple, Partition};
use crate::rng::{substream, tag};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieContextResult {
    pub context_id: String,
    /// |base - sum_j bin_belief_j * bin_weight_j|
    pub delta: f64,
    /// delta / base, absent when the base belief is zero.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieResult {
    pub per_context: Vec<LieContextResult>,
    pub median_ratio: f64,
    pub median_ratio_ci: BootstrapCI,
    pub baseline_median_ratio: Option<f64>,
    /// Contexts excluded from the ratio because their base belief is zero.
    pub zero_belief_contexts: usize,
}

#[derive(Debug, Clone)]
pub struct LieConfig {
    pub bootstraps: usize,
    pub level: f64,
}

impl Default for LieConfig {
    fn default() -> Self {
        LieConfig {
            bootstraps: 500,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LieBaselineConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub folds: usize,
}

impl Default for LieBaselineConfig {
    fn default() -> Self {
        LieBaselineConfig {
            trees: 200,
            max_depth: 25,
            folds: 5,
        }
    }
}

/// Ground-truth material for the regressor baseline: oracle triples (exact
/// posteriors) and a numeric feature vector per context.
#[derive(Debug, Clone)]
pub struct LieBaseline {
    pub triples: Vec<LieTriple>,
    pub features: BTreeMap<String, Vec<f64>>,
    pub config: LieBaselineConfig,
}

pub(crate) fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn delta_of(triple: &LieTriple) -> f64 {
    let mixture: f64 = triple
        .bin_beliefs
        .iter()
        .zip(&triple.bin_weights)
        .map(|(b, w)| b * w)
        .sum();
    (triple.base_belief - mixture).abs()
}

/// Residuals, ratios, and the bootstrap median for a set of triples; when a
/// baseline is supplied, the analogous median from cross-validated regressor
/// predictions on the ground-truth posteriors.
pub fn lie_test(
    triples: &[LieTriple],
    baseline: Option<&LieBaseline>,
    cfg: &LieConfig,
    rng_seed: u64,
) -> Result<LieResult, AuditError> {
    if triples.is_empty() {
        return Err(AuditError::EmptyDataset);
    }
    for t in triples {
        t.validate().map_err(|reason| AuditError::BadTriple {
            context: t.context_id.clone(),
            reason,
        })?;
    }
    let mut sorted: Vec<&LieTriple> = triples.iter().collect();
    sorted.sort_by(|a, b| a.context_id.cmp(&b.context_id));

    let per_context: Vec<LieContextResult> = sorted
        .iter()
        .map(|t| {
            let delta = delta_of(t);
            LieContextResult {
                context_id: t.context_id.clone(),
                delta,
                ratio: (t.base_belief > 0.0).then(|| delta / t.base_belief),
            }
        })
        .collect();
    let ratios: Vec<f64> = per_context.iter().filter_map(|c| c.ratio).collect();
    let zero_belief_contexts = per_context.len() - ratios.len();
    if ratios.is_empty() {
        return Err(AuditError::AllZeroBase);
    }
    let mut ratio_sorted = ratios.clone();
    ratio_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_ratio = median(&ratio_sorted);

    let units: Vec<Vec<usize>> = (0..per_context.len()).map(|i| vec![i]).collect();
    let median_ratio_ci = bootstrap_ci(
        |idx: &[usize]| {
            let mut vals: Vec<f64> = idx.iter().filter_map(|&i| per_context[i].ratio).collect();
            if vals.is_empty() {
                return Err(crate::estimators::EstimatorError::EmptyInput);
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Ok(median(&vals))
        },
        &units,
        cfg.bootstraps,
        cfg.level,
        rng_seed,
    )?;

    let baseline_median_ratio = match baseline {
        Some(b) => Some(baseline_median(b, rng_seed)?),
        None => None,
    };

    Ok(LieResult {
        per_context,
        median_ratio,
        median_ratio_ci,
        baseline_median_ratio,
        zero_belief_contexts,
    })
}

/// Fit out-of-fold bagged-tree predictions of the ground-truth base and
/// conditional posteriors, then compute the median residual ratio those
/// predictions produce under the oracle weights.
fn baseline_median(baseline: &LieBaseline, rng_seed: u64) -> Result<f64, AuditError> {
    let cfg = &baseline.config;
    let mut triples: Vec<&LieTriple> = baseline.triples.iter().collect();
    triples.sort_by(|a, b| a.context_id.cmp(&b.context_id));
    for t in &triples {
        if !baseline.features.contains_key(&t.context_id) {
            return Err(AuditError::BadTriple {
                context: t.context_id.clone(),
                reason: "no feature vector for baseline context".into(),
            });
        }
    }

    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut rng = substream(rng_seed, tag::FOLDS, 1);
    order.shuffle(&mut rng);
    let fold_of: Vec<usize> = {
        let mut f = vec![0usize; triples.len()];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos % cfg.folds;
        }
        f
    };

    let n_cells = triples[0].bin_beliefs.len();
    let mut ratios = Vec::new();
    for fold in 0..cfg.folds {
        let train: Vec<usize> = (0..triples.len()).filter(|&i| fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..triples.len()).filter(|&i| fold_of[i] == fold).collect();
        if train.is_empty() || test.is_empty() {
            continue;
        }
        // base regressor on x -> p*(x)
        let base_x: Vec<Vec<f64>> = train
            .iter()
            .map(|&i| baseline.features[&triples[i].context_id].clone())
            .collect();
        let base_y: Vec<f64> = train.iter().map(|&i| triples[i].base_belief).collect();
        let base_model =
            BaggedTreeRegressor::fit(&base_x, &base_y, cfg.trees, cfg.max_depth, rng_seed)?;

        // conditional regressor on (x, one-hot cell) -> p*(x, z = cell)
        let mut cond_x = Vec::new();
        let mut cond_y = Vec::new();
        for &i in &train {
            let fx = &baseline.features[&triples[i].context_id];
            for (j, bb) in triples[i].bin_beliefs.iter().enumerate() {
                let mut row = fx.clone();
                for c in 0..n_cells {
                    row.push(if c == j { 1.0 } else { 0.0 });
                }
                cond_x.push(row);
                cond_y.push(*bb);
            }
        }
        let cond_model =
            BaggedTreeRegressor::fit(&cond_x, &cond_y, cfg.trees, cfg.max_depth, rng_seed)?;

        for &i in &test {
            let fx = &baseline.features[&triples[i].context_id];
            let base_hat = base_model.predict(fx).clamp(0.0, 1.0);
            let mut mixture = 0.0;
            for (j, w) in triples[i].bin_weights.iter().enumerate() {
                let mut row = fx.clone();
                for c in 0..n_cells {
                    row.push(if c == j { 1.0 } else { 0.0 });
                }
                mixture += cond_model.predict(&row).clamp(0.0, 1.0) * w;
            }
            if base_hat > 0.0 {
                ratios.push((base_hat - mixture).abs() / base_hat);
            }
        }
    }
    if ratios.is_empty() {
        return Err(AuditError::AllZeroBase);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(median(&ratios))
}

/// Read exact LIE triples off a network: base and conditional posteriors plus
/// partition weights for an auxiliary node z. These satisfy the decomposition
/// identically; zero-weight cells are skipped and noted.
pub fn lie_oracle_triples(
    net: &BayesNet,
    contexts: &[ContextAssignment],
    z_node: &str,
) -> Result<(Vec<LieTriple>, Vec<String>), AuditError> {
    let z_levels = net.levels_of(z_node)?.to_vec();
    let target = net.target_name().to_string();
    let width = (contexts.len().max(2) as f64).log10().ceil() as usize;
    let mut triples = Vec::with_capacity(contexts.len());
    let mut notes = Vec::new();
    for (ci, ctx) in contexts.iter().enumerate() {
        if ctx.pairs.iter().any(|(name, _)| name == z_node) {
            return Err(AuditError::BadTriple {
                context: format!("ctx{ci:0width$}"),
                reason: format!("auxiliary node '{z_node}' already assigned in the context"),
            });
        }
        let base = net.eliminate(&target, ctx)?[1];
        let weights_full = net.eliminate(z_node, ctx)?;
        let mut bin_beliefs = Vec::new();
        let mut bin_weights = Vec::new();
        let mut cells = Vec::new();
        for (j, level) in z_levels.iter().enumerate() {
            if weights_full[j] <= 0.0 {
                notes.push(format!(
                    "ctx{ci:0width$}: cell '{level}' of '{z_node}' has zero weight, skipped"
                ));
                continue;
            }
            let mut extended = ctx.pairs.clone();
            extended.push((z_node.to_string(), level.clone()));
            let cond = net.eliminate(&target, &ContextAssignment { pairs: extended })?[1];
            bin_beliefs.push(cond);
            bin_weights.push(weights_full[j]);
            cells.push(level.clone());
        }
        triples.push(LieTriple {
            context_id: format!("ctx{ci:0width$}"),
            base_belief: base,
            bin_beliefs,
            bin_weights,
            partition: Partition {
                variable: z_node.to_string(),
                cells,
            },
        });
    }
    Ok((triples, notes))
}
