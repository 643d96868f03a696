//! Depth-limited gradient-boosted trees with a multiclass softmax objective,
//! grouped cross-validation, and a bagged-tree regressor.
//!
//! Deliberately minimal: exact greedy splits on numeric features (one-hot
//! encoded categoricals upstream), second-order leaf weights g/(h+lambda),
//! fixed learning rate. The predictive audit compares nested feature sets, so
//! the delta matters more than absolute classifier quality. Everything is
//! sequential and seed-deterministic.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::rng::{substream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub depth: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub lambda: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            depth: 6,
            iterations: 1000,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a GbdtConfig,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        let g: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        -g / (h + self.cfg.lambda)
    }

    fn build(&mut self, mut idx: Vec<usize>, depth: usize) -> usize {
        if depth >= self.cfg.depth || idx.len() < 2 * self.cfg.min_samples_leaf {
            let value = self.leaf_value(&idx);
            self.nodes.push(Node::Leaf { value });
            return self.nodes.len() - 1;
        }
        let g_total: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h_total: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        let parent_score = g_total * g_total / (h_total + self.cfg.lambda);

        let n_features = self.features[0].len();
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        for f in 0..n_features {
            idx.sort_by(|&i, &j| {
                self.features[i][f]
                    .partial_cmp(&self.features[j][f])
                    .unwrap()
                    .then(i.cmp(&j))
            });
            let mut gl = 0.0;
            let mut hl = 0.0;
            for pos in 0..idx.len() - 1 {
                let i = idx[pos];
                gl += self.grad[i];
                hl += self.hess[i];
                let x_here = self.features[i][f];
                let x_next = self.features[idx[pos + 1]][f];
                if x_here == x_next {
                    continue;
                }
                let n_left = pos + 1;
                let n_right = idx.len() - n_left;
                if n_left < self.cfg.min_samples_leaf || n_right < self.cfg.min_samples_leaf {
                    continue;
                }
                let gr = g_total - gl;
                let hr = h_total - hl;
                let gain = gl * gl / (hl + self.cfg.lambda) + gr * gr / (hr + self.cfg.lambda)
                    - parent_score;
                let threshold = 0.5 * (x_here + x_next);
                let better = match best {
                    None => gain > 1e-12,
                    Some((bg, _, _)) => gain > bg + 1e-12,
                };
                if better {
                    best = Some((gain, f, threshold));
                }
            }
        }

        match best {
            None => {
                let value = self.leaf_value(&idx);
                self.nodes.push(Node::Leaf { value });
                self.nodes.len() - 1
            }
            Some((_, feature, threshold)) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
                    .into_iter()
                    .partition(|&i| self.features[i][feature] <= threshold);
                let slot = self.nodes.len();
                self.nodes.push(Node::Leaf { value: 0.0 }); // placeholder
                let left = self.build(left_idx, depth + 1);
                let right = self.build(right_idx, depth + 1);
                self.nodes[slot] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                slot
            }
        }
    }
}

fn fit_tree(
    features: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    idx: Vec<usize>,
    cfg: &GbdtConfig,
) -> RegressionTree {
    let mut builder = TreeBuilder {
        features,
        grad,
        hess,
        cfg,
        nodes: Vec::new(),
    };
    let root = builder.build(idx, 0);
    debug_assert_eq!(root, 0);
    RegressionTree {
        nodes: builder.nodes,
    }
}

/// Multiclass gradient-boosted classifier with softmax link.
pub struct GbdtClassifier {
    pub n_classes: usize,
    base: Vec<f64>,
    trees: Vec<Vec<RegressionTree>>, // [iteration][class]
    learning_rate: f64,
    /// Training log-loss after each boosting iteration.
    pub train_logloss: Vec<f64>,
}

fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl GbdtClassifier {
    /// Fit on rows `features` with class labels in `0..n_classes`.
    pub fn fit(
        features: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        cfg: &GbdtConfig,
    ) -> Result<GbdtClassifier, EstimatorError> {
        if features.len() != labels.len() {
            return Err(EstimatorError::LengthMismatch);
        }
        if features.is_empty() {
            return Err(EstimatorError::EmptyInput);
        }
        let n = features.len();
        let mut counts = vec![0usize; n_classes];
        for &l in labels {
            counts[l] += 1;
        }
        let base: Vec<f64> = counts
            .iter()
            .map(|&c| ((c.max(1)) as f64 / n as f64).ln())
            .collect();

        let mut scores: Vec<Vec<f64>> = vec![base.clone(); n];
        let mut trees: Vec<Vec<RegressionTree>> = Vec::new();
        let mut train_logloss = Vec::new();

        if n_classes < 2 {
            return Ok(GbdtClassifier {
                n_classes,
                base,
                trees,
                learning_rate: cfg.learning_rate,
                train_logloss,
            });
        }

        let mut probs = vec![0.0; n_classes];
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..cfg.iterations {
            let mut round = Vec::with_capacity(n_classes);
            for c in 0..n_classes {
                for i in 0..n {
                    softmax_into(&scores[i], &mut probs);
                    let y = if labels[i] == c { 1.0 } else { 0.0 };
                    grad[i] = probs[c] - y;
                    hess[i] = (probs[c] * (1.0 - probs[c])).max(1e-12);
                }
                let tree = fit_tree(features, &grad, &hess, (0..n).collect(), cfg);
                for i in 0..n {
                    scores[i][c] += cfg.learning_rate * tree.predict(&features[i]);
                }
                round.push(tree);
            }
            trees.push(round);
            let mut loss = 0.0;
            for i in 0..n {
                softmax_into(&scores[i], &mut probs);
                loss -= probs[labels[i]].max(1e-15).ln();
            }
            train_logloss.push(loss / n as f64);
        }
        Ok(GbdtClassifier {
            n_classes,
            base,
            trees,
            learning_rate: cfg.learning_rate,
            train_logloss,
        })
    }

    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        let mut scores = self.base.clone();
        for round in &self.trees {
            for (c, tree) in round.iter().enumerate() {
                scores[c] += self.learning_rate * tree.predict(row);
            }
        }
        let mut out = vec![0.0; self.n_classes];
        softmax_into(&scores, &mut out);
        out
    }
}

/// Out-of-fold log-loss from grouped cross-validation.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    /// Record-weighted mean of the per-record out-of-fold log-losses.
    pub mean_logloss: f64,
    /// Per-record out-of-fold log-loss, aligned with the input rows.
    pub per_record: Vec<f64>,
    pub fold_of_record: Vec<usize>,
}

/// Grouped K-fold CV of the boosted classifier: all records of one group land
/// in the same fold, so repetitions of a context never span train and test.
///
/// Labels are class indices; `class_names` is used only for error messages.
/// Errors if any fold's training split lacks a class that the data contains.
pub fn gbdt_grouped_cv_logloss(
    features: &[Vec<f64>],
    labels: &[usize],
    groups: &[String],
    class_names: &[String],
    folds: usize,
    cfg: &GbdtConfig,
    rng_seed: u64,
) -> Result<CvOutcome, EstimatorError> {
    let n = features.len();
    if labels.len() != n || groups.len() != n {
        return Err(EstimatorError::LengthMismatch);
    }
    if n == 0 {
        return Err(EstimatorError::EmptyInput);
    }
    if folds < 2 {
        return Err(EstimatorError::InvalidConfig("folds must be >= 2".into()));
    }
    let n_classes = labels.iter().max().unwrap() + 1;

    let mut distinct: Vec<&String> = {
        let mut set: Vec<&String> = groups.iter().collect();
        set.sort();
        set.dedup();
        set
    };
    let mut rng = substream(rng_seed, tag::FOLDS, 0);
    distinct.shuffle(&mut rng);
    let fold_of_group: std::collections::BTreeMap<&String, usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, g)| (*g, i % folds))
        .collect();
    let fold_of_record: Vec<usize> = groups.iter().map(|g| fold_of_group[g]).collect();

    let present: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut per_record = vec![0.0; n];
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of_record[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of_record[i] == fold).collect();
        if test.is_empty() {
            continue;
        }
        let train_classes: std::collections::BTreeSet<usize> =
            train.iter().map(|&i| labels[i]).collect();
        for c in &present {
            if !train_classes.contains(c) {
                return Err(EstimatorError::ClassAbsentFromTrainingFold {
                    class: class_names
                        .get(*c)
                        .cloned()
                        .unwrap_or_else(|| c.to_string()),
                    fold,
                });
            }
        }
        let train_features: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
        let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let model = GbdtClassifier::fit(&train_features, &train_labels, n_classes, cfg)?;
        for &i in &test {
            let probs = model.predict_proba(&features[i]);
            per_record[i] = -probs[labels[i]].max(1e-15).ln();
        }
    }
    let mean_logloss = per_record.iter().sum::<f64>() / n as f64;
    Ok(CvOutcome {
        mean_logloss,
        per_record,
        fold_of_record,
    })
}

/// Bagged regression trees (bootstrap aggregation over squared-error trees),
/// the comparator model for the coherence baseline.
pub struct BaggedTreeRegressor {
    trees: Vec<RegressionTree>,
}

impl BaggedTreeRegressor {
    pub fn fit(
        features: &[Vec<f64>],
        targets: &[f64],
        n_trees: usize,
        max_depth: usize,
        rng_seed: u64,
    ) -> Result<BaggedTreeRegressor, EstimatorError> {
        if features.len() != targets.len() {
            return Err(EstimatorError::LengthMismatch);
        }
        if features.is_empty() {
            return Err(EstimatorError::EmptyInput);
        }
        let n = features.len();
        // Squared error: fitting residuals from 0 with hess 1 and lambda 0
        // makes each leaf the plain mean of its targets.
        let cfg = GbdtConfig {
            depth: max_depth,
            iterations: 1,
            learning_rate: 1.0,
            min_samples_leaf: 1,
            lambda: 0.0,
        };
        let grad: Vec<f64> = targets.iter().map(|t| -t).collect();
        let hess = vec![1.0; n];
        let mut trees = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let mut rng = substream(rng_seed, tag::BAGGING, t as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            trees.push(fit_tree(features, &grad, &hess, idx, &cfg));
        }
        Ok(BaggedTreeRegressor { trees })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        total / self.trees.len() as f64
    }
}
