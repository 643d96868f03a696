//! Synthetic network generators.
//!
//! The expert clinical networks behind the original experiments are
//! restricted, so the repo ships generator recipes instead: layered DAGs with
//! a demographics -> findings -> indicators -> target shape and configurable
//! sizes. The target CPT is a logistic score over indicator states, which
//! spreads ground-truth posteriors across [0,1] so stratified sampling has
//! material to work with.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BayesNet, NetError, NetStructure, NodeDef};
use crate::rng::{substream, tag};

/// Where the target sits relative to the indicator layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRole {
    /// Target is a child of every indicator (heart-style).
    Leaf,
    /// Target hangs off the demographics and feeds the indicators
    /// (diabetes-style: the target has children).
    Hub,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LayeredNetConfig {
    pub demographics: usize,
    pub findings: usize,
    pub indicators: usize,
    /// Level count for demographic nodes (findings/indicators/target are binary).
    pub demographic_levels: usize,
    /// Cap on parents per finding/indicator node.
    pub max_parents: usize,
    pub target_role: TargetRole,
    pub seed: u64,
}

impl Default for LayeredNetConfig {
    fn default() -> Self {
        LayeredNetConfig {
            demographics: 3,
            findings: 3,
            indicators: 5,
            demographic_levels: 2,
            max_parents: 3,
            target_role: TargetRole::Leaf,
            seed: 0,
        }
    }
}

fn binary_levels() -> Vec<String> {
    vec!["0".to_string(), "1".to_string()]
}

/// A random probability row over `k` levels (uniform on the simplex).
fn random_row<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|d| d / total).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Build a layered synthetic network from a recipe; deterministic in the
/// recipe's seed.
pub fn layered_net(cfg: &LayeredNetConfig) -> Result<BayesNet, NetError> {
    assert!(cfg.demographics >= 1 && cfg.indicators >= 1);
    assert!(cfg.demographic_levels >= 2);
    let mut rng = substream(cfg.seed, tag::NET_GEN, 0);

    let mut nodes = Vec::new();
    for i in 0..cfg.demographics {
        let levels = (0..cfg.demographic_levels)
            .map(|l| format!("d{l}"))
            .collect();
        nodes.push(NodeDef {
            name: format!("demo{i}"),
            levels,
        });
    }
    for i in 0..cfg.findings {
        nodes.push(NodeDef {
            name: format!("find{i}"),
            levels: binary_levels(),
        });
    }
    for i in 0..cfg.indicators {
        nodes.push(NodeDef {
            name: format!("ind{i}"),
            levels: binary_levels(),
        });
    }
    nodes.push(NodeDef {
        name: "target".to_string(),
        levels: binary_levels(),
    });

    let demo_names: Vec<String> = (0..cfg.demographics).map(|i| format!("demo{i}")).collect();
    let find_names: Vec<String> = (0..cfg.findings).map(|i| format!("find{i}")).collect();
    let ind_names: Vec<String> = (0..cfg.indicators).map(|i| format!("ind{i}")).collect();

    let mut edges: Vec<(String, String)> = Vec::new();
    let pick_parents = |pool: &[String], cap: usize, rng: &mut rand_chacha::ChaCha12Rng| {
        let mut pool: Vec<String> = pool.to_vec();
        pool.shuffle(rng);
        let k = cap.min(pool.len()).max(1);
        pool.truncate(k);
        pool.sort();
        pool
    };

    for (i, name) in find_names.iter().enumerate() {
        let mut pool = demo_names.clone();
        if i > 0 && rng.gen::<f64>() < 0.5 {
            pool.push(find_names[i - 1].clone());
        }
        for p in pick_parents(&pool, cfg.max_parents, &mut rng) {
            edges.push((p, name.clone()));
        }
    }
    for name in &ind_names {
        let pool: Vec<String> = demo_names
            .iter()
            .chain(find_names.iter())
            .cloned()
            .collect();
        for p in pick_parents(&pool, cfg.max_parents, &mut rng) {
            edges.push((p, name.clone()));
        }
    }
    match cfg.target_role {
        TargetRole::Leaf => {
            for p in &ind_names {
                edges.push((p.clone(), "target".to_string()));
            }
        }
        TargetRole::Hub => {
            for p in pick_parents(&demo_names, 2, &mut rng) {
                edges.push((p, "target".to_string()));
            }
            for name in &ind_names {
                edges.push(("target".to_string(), name.clone()));
            }
        }
    }

    let structure = NetStructure {
        nodes: nodes.clone(),
        edges: edges.clone(),
        target: "target".into(),
    };

    // Parent lists in edge order, needed to size the CPTs.
    let mut parents: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for def in &nodes {
        parents.insert(def.name.clone(), Vec::new());
    }
    for (p, c) in &edges {
        parents.get_mut(c).unwrap().push(p.clone());
    }
    let levels_of: BTreeMap<String, usize> = nodes
        .iter()
        .map(|d| (d.name.clone(), d.levels.len()))
        .collect();

    let mut cpts: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for def in &nodes {
        let pars = &parents[&def.name];
        let n_rows: usize = pars.iter().map(|p| levels_of[p]).product::<usize>().max(1);
        let mut table = BTreeMap::new();
        let logistic_target = def.name == "target" && cfg.target_role == TargetRole::Leaf;
        // Logistic weights over binary parent states for the leaf target.
        let weights: Vec<f64> = (0..pars.len()).map(|_| rng.gen_range(-2.2..2.2)).collect();
        let intercept: f64 = rng.gen_range(-1.0..1.0);
        for combo in 0..n_rows {
            let key = combo_key(pars, &levels_of, &nodes, combo);
            let row = if logistic_target {
                let mut rest = combo;
                let mut states = vec![0usize; pars.len()];
                for pos in (0..pars.len()).rev() {
                    states[pos] = rest % levels_of[&pars[pos]];
                    rest /= levels_of[&pars[pos]];
                }
                let score: f64 = intercept
                    + states
                        .iter()
                        .zip(&weights)
                        .map(|(s, w)| if *s == 1 { *w } else { 0.0 })
                        .sum::<f64>();
                let p1 = sigmoid(score);
                vec![1.0 - p1, p1]
            } else {
                random_row(&mut rng, def.levels.len())
            };
            table.insert(key, row);
        }
        cpts.insert(def.name.clone(), table);
    }

    BayesNet::from_parts(&structure, &cpts, 0)
}

fn combo_key(
    pars: &[String],
    levels_of: &BTreeMap<String, usize>,
    nodes: &[NodeDef],
    mut combo: usize,
) -> String {
    let mut parts = vec![String::new(); pars.len()];
    for (pos, p) in pars.iter().enumerate().rev() {
        let k = levels_of[p];
        let lvl = combo % k;
        combo /= k;
        let def = nodes.iter().find(|d| &d.name == p).unwrap();
        parts[pos] = def.levels[lvl].clone();
    }
    parts.join("|")
}

/// A random binary DAG with random CPTs; nodes `n00..`, parents drawn from
/// earlier nodes. Used as the inference-oracle workload.
pub fn random_binary_dag(n_nodes: usize, max_parents: usize, seed: u64) -> BayesNet {
    let mut rng = substream(seed, tag::NET_GEN, 1);
    let nodes: Vec<NodeDef> = (0..n_nodes)
        .map(|i| NodeDef {
            name: format!("n{i:02}"),
            levels: binary_levels(),
        })
        .collect();
    let mut edges = Vec::new();
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for child in 1..n_nodes {
        let k = rng.gen_range(0..=max_parents.min(child));
        let mut pool: Vec<usize> = (0..child).collect();
        pool.shuffle(&mut rng);
        pool.truncate(k);
        pool.sort_unstable();
        for p in pool {
            edges.push((nodes[p].name.clone(), nodes[child].name.clone()));
            parents[child].push(p);
        }
    }
    let mut cpts: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for (id, def) in nodes.iter().enumerate() {
        let n_rows = 1usize << parents[id].len();
        let mut table = BTreeMap::new();
        for combo in 0..n_rows {
            let mut parts = Vec::with_capacity(parents[id].len());
            for pos in 0..parents[id].len() {
                let bit = (combo >> (parents[id].len() - 1 - pos)) & 1;
                parts.push(bit.to_string());
            }
            let p1 = rng.gen_range(0.02..0.98);
            table.insert(parts.join("|"), vec![1.0 - p1, p1]);
        }
        cpts.insert(def.name.clone(), table);
    }
    let target = nodes.last().unwrap().name.clone();
    let structure = NetStructure {
        nodes,
        edges,
        target,
    };
    BayesNet::from_parts(&structure, &cpts, 0).expect("generated net is valid")
}
