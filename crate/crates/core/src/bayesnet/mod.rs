//! Discrete Bayesian networks: the ground-truth machinery.
//!
//! Networks supply exact posteriors p*(target | x) via variable elimination,
//! maximum-likelihood CPT fitting with a minimum-support threshold, a
//! brute-force joint enumeration oracle, stratified context sampling across
//! the posterior range, and seeded outcome draws.
//!
//! Parent-level combinations observed fewer than `min_support` times during
//! fitting are excluded rather than smoothed: any query that needs such a row
//! fails loudly, because silently smoothing would corrupt the ground truth
//! the audits are compared against.

mod factor;
pub mod generate;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, tag};
use factor::Factor;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("parent graph has a cycle involving '{0}'")]
    Cycle(String),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("unknown level '{level}' for node '{node}'")]
    UnknownLevel { node: String, level: String },
    #[error("invalid cpt for node '{node}', combination '{combo}': {reason}")]
    InvalidCpt {
        node: String,
        combo: String,
        reason: String,
    },
    #[error("insufficient support for node '{node}', parent combination '{combo}'")]
    InsufficientSupport { node: String, combo: String },
    #[error("impossible evidence: zero marginal probability")]
    ImpossibleEvidence,
    #[error("query node '{0}' appears in the evidence")]
    QueryInEvidence(String),
    #[error("target node '{0}' must have exactly 2 levels")]
    TargetNotBinary(String),
    #[error("joint state space has {0} entries, exceeding the 2^20 limit")]
    StateSpaceTooLarge(u128),
    #[error("duplicate node '{0}' in assignment")]
    DuplicateAssignment(String),
    #[error("not enough distinct supported contexts: needed {needed}, found {available}")]
    NotEnoughContexts { needed: usize, available: usize },
    #[error("sample {index} does not assign every node")]
    IncompleteSample { index: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed network file: {0}")]
    Format(String),
}

/// Node declaration: name plus ordered level set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDef {
    pub name: String,
    pub levels: Vec<String>,
}

/// Network skeleton: nodes, directed edges, designated binary target.
/// Parent order per child is the edge declaration order.
#[derive(Debug, Clone)]
pub struct NetStructure {
    pub nodes: Vec<NodeDef>,
    pub edges: Vec<(String, String)>,
    pub target: String,
}

#[derive(Debug)]
struct CompiledNode {
    name: String,
    levels: Vec<String>,
    parents: Vec<usize>,
    /// Rows indexed by mixed-radix parent combination (declared parent order,
    /// first parent slowest). `None` marks an excluded low-support row.
    cpt: Vec<Option<Vec<f64>>>,
}

/// A discrete directed network with CPTs and a binary target node.
#[derive(Debug)]
pub struct BayesNet {
    nodes: Vec<CompiledNode>,
    name_to_id: BTreeMap<String, usize>,
    target: usize,
    min_support: u32,
    topo: Vec<usize>,
}

/// An assignment of levels to a subset of non-target nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextAssignment {
    pub pairs: Vec<(String, String)>,
}

impl ContextAssignment {
    pub fn new(pairs: Vec<(&str, &str)>) -> ContextAssignment {
        ContextAssignment {
            pairs: pairs
                .into_iter()
                .map(|(n, l)| (n.to_string(), l.to_string()))
                .collect(),
        }
    }
}

const ROW_SUM_TOL: f64 = 1e-12;

impl BayesNet {
    /// Assemble and validate a network from explicit CPTs.
    ///
    /// `cpts` maps node name -> combo key -> probability row, where the combo
    /// key is the "|"-joined parent levels in declared parent order (empty
    /// string for root nodes). Missing combo keys become excluded rows.
    pub fn from_parts(
        structure: &NetStructure,
        cpts: &BTreeMap<String, BTreeMap<String, Vec<f64>>>,
        min_support: u32,
    ) -> Result<BayesNet, NetError> {
        let Compiled {
            mut nodes,
            name_to_id,
            target,
        } = compile_structure(structure)?;
        for node_id in 0..nodes.len() {
            let n_rows = parent_combo_count(&nodes, node_id);
            let mut rows: Vec<Option<Vec<f64>>> = vec![None; n_rows];
            if let Some(node_cpt) = cpts.get(&nodes[node_id].name) {
                for (key, row) in node_cpt {
                    let combo = combo_index_from_key(&nodes, node_id, key)?;
                    validate_row(&nodes[node_id].name, key, row, nodes[node_id].levels.len())?;
                    rows[combo] = Some(row.clone());
                }
            }
            nodes[node_id].cpt = rows;
        }
        let topo = topo_order(&nodes)?;
        Ok(BayesNet {
            nodes,
            name_to_id,
            target,
            min_support,
            topo,
        })
    }

    pub fn node_names(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }

    pub fn levels_of(&self, node: &str) -> Result<&[String], NetError> {
        let id = self.node_id(node)?;
        Ok(&self.nodes[id].levels)
    }

    pub fn target_name(&self) -> &str {
        &self.nodes[self.target].name
    }

    pub fn min_support(&self) -> u32 {
        self.min_support
    }

    /// Non-target node names in declared order.
    pub fn covariate_names(&self) -> Vec<String> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.target)
            .map(|(_, n)| n.name.clone())
            .collect()
    }

    fn node_id(&self, name: &str) -> Result<usize, NetError> {
        self.name_to_id
            .get(name)
            .copied()
            .ok_or_else(|| NetError::UnknownNode(name.to_string()))
    }

    fn resolve(&self, assignment: &ContextAssignment) -> Result<Vec<(usize, usize)>, NetError> {
        let mut out = Vec::with_capacity(assignment.pairs.len());
        let mut seen = BTreeSet::new();
        for (name, level) in &assignment.pairs {
            let id = self.node_id(name)?;
            if !seen.insert(id) {
                return Err(NetError::DuplicateAssignment(name.clone()));
            }
            let lvl = self.nodes[id]
                .levels
                .iter()
                .position(|l| l == level)
                .ok_or_else(|| NetError::UnknownLevel {
                    node: name.clone(),
                    level: level.clone(),
                })?;
            out.push((id, lvl));
        }
        Ok(out)
    }

    /// Build the factor for one node's CPT under the evidence map, erroring on
    /// any excluded row consistent with the evidence.
    fn node_factor(&self, node_id: usize, evidence: &[Option<usize>]) -> Result<Factor, NetError> {
        let node = &self.nodes[node_id];
        let free_parents: Vec<usize> = node
            .parents
            .iter()
            .copied()
            .filter(|p| evidence[*p].is_none())
            .collect();
        let node_free = evidence[node_id].is_none();

        let mut vars: Vec<usize> = free_parents.clone();
        if node_free {
            vars.push(node_id);
        }
        vars.sort_unstable();
        let card: Vec<usize> = vars.iter().map(|v| self.nodes[*v].levels.len()).collect();
        let size = card.iter().product::<usize>().max(1);
        let mut data = vec![0.0; size];

        let mut levels = vec![0usize; vars.len()];
        for (idx, slot) in data.iter_mut().enumerate() {
            // decode idx (first var slowest)
            let mut rest = idx;
            for pos in (0..vars.len()).rev() {
                levels[pos] = rest % card[pos];
                rest /= card[pos];
            }
            let level_of = |v: usize| -> usize {
                match vars.binary_search(&v) {
                    Ok(pos) => levels[pos],
                    Err(_) => evidence[v].expect("var must be free or in evidence"),
                }
            };
            let mut combo = 0usize;
            for p in &node.parents {
                combo = combo * self.nodes[*p].levels.len() + level_of(*p);
            }
            let row = node.cpt[combo]
                .as_ref()
                .ok_or_else(|| NetError::InsufficientSupport {
                    node: node.name.clone(),
                    combo: self.combo_key(node_id, combo),
                })?;
            *slot = row[level_of(node_id)];
        }
        Ok(Factor { vars, card, data })
    }

    fn combo_key(&self, node_id: usize, mut combo: usize) -> String {
        let parents = &self.nodes[node_id].parents;
        let mut parts = vec![String::new(); parents.len()];
        for (pos, p) in parents.iter().enumerate().rev() {
            let k = self.nodes[*p].levels.len();
            parts[pos] = self.nodes[*p].levels[combo % k].clone();
            combo /= k;
        }
        parts.join("|")
    }

    /// Exact posterior P(query | evidence) by variable elimination.
    ///
    /// Elimination order is min-fill with ties broken by node name. Returns a
    /// probability vector over the query node's levels.
    pub fn eliminate(
        &self,
        query: &str,
        evidence: &ContextAssignment,
    ) -> Result<Vec<f64>, NetError> {
        let q = self.node_id(query)?;
        let ev = self.resolve(evidence)?;
        if ev.iter().any(|(id, _)| *id == q) {
            return Err(NetError::QueryInEvidence(query.to_string()));
        }
        let mut evmap: Vec<Option<usize>> = vec![None; self.nodes.len()];
        for (id, lvl) in &ev {
            evmap[*id] = Some(*lvl);
        }

        let mut factors: Vec<Factor> = Vec::with_capacity(self.nodes.len());
        for id in 0..self.nodes.len() {
            factors.push(self.node_factor(id, &evmap)?);
        }

        let mut to_eliminate: BTreeSet<usize> = (0..self.nodes.len())
            .filter(|id| *id != q && evmap[*id].is_none())
            .collect();

        while !to_eliminate.is_empty() {
            let victim = self.min_fill_choice(&factors, &to_eliminate);
            to_eliminate.remove(&victim);
            let (with_v, rest): (Vec<Factor>, Vec<Factor>) =
                factors.into_iter().partition(|f| f.vars.contains(&victim));
            let mut product = Factor::scalar(1.0);
            for f in &with_v {
                product = product.multiply(f);
            }
            factors = rest;
            factors.push(product.marginalize(victim));
        }

        let mut result = Factor::scalar(1.0);
        for f in &factors {
            result = result.multiply(f);
        }
        debug_assert_eq!(result.vars, vec![q]);
        let total: f64 = result.data.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(NetError::ImpossibleEvidence);
        }
        Ok(result.data.iter().map(|x| x / total).collect())
    }

    /// Min-fill heuristic: pick the variable whose elimination adds the fewest
    /// interaction-graph edges; ties broken by node name.
    fn min_fill_choice(&self, factors: &[Factor], candidates: &BTreeSet<usize>) -> usize {
        let mut adj: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for f in factors {
            for &a in &f.vars {
                for &b in &f.vars {
                    if a != b {
                        adj.entry(a).or_default().insert(b);
                    }
                }
            }
        }
        let mut best: Option<(usize, &str, usize)> = None; // (fill, name, id)
        for &v in candidates {
            let neighbors: Vec<usize> = adj
                .get(&v)
                .map(|s| {
                    s.iter()
                        .copied()
                        .filter(|n| candidates.contains(n) || true)
                        .collect()
                })
                .unwrap_or_default();
            let mut fill = 0usize;
            for i in 0..neighbors.len() {
                for j in (i + 1)..neighbors.len() {
                    let connected = adj
                        .get(&neighbors[i])
                        .map(|s| s.contains(&neighbors[j]))
                        .unwrap_or(false);
                    if !connected {
                        fill += 1;
                    }
                }
            }
            let name = self.nodes[v].name.as_str();
            let better = match best {
                None => true,
                Some((bf, bn, _)) => fill < bf || (fill == bf && name < bn),
            };
            if better {
                best = Some((fill, name, v));
            }
        }
        best.expect("candidates non-empty").2
    }

    /// Convenience: P(target = positive level | x). The positive level is the
    /// second declared level of the target node.
    pub fn target_posterior(&self, x: &ContextAssignment) -> Result<f64, NetError> {
        let post = self.eliminate(self.target_name().to_string().as_str(), x)?;
        Ok(post[1])
    }

    /// Brute-force joint table over every full assignment.
    pub fn enumerate_joint(&self) -> Result<JointTable, NetError> {
        let size: u128 = self.nodes.iter().map(|n| n.levels.len() as u128).product();
        if size > (1 << 20) {
            return Err(NetError::StateSpaceTooLarge(size));
        }
        let size = size as usize;
        let mut probs = vec![0.0; size];
        let cards: Vec<usize> = self.nodes.iter().map(|n| n.levels.len()).collect();
        let mut levels = vec![0usize; self.nodes.len()];
        for (idx, slot) in probs.iter_mut().enumerate() {
            let mut rest = idx;
            for pos in (0..self.nodes.len()).rev() {
                levels[pos] = rest % cards[pos];
                rest /= cards[pos];
            }
            let mut p = 1.0;
            for (id, node) in self.nodes.iter().enumerate() {
                let mut combo = 0usize;
                for par in &node.parents {
                    combo = combo * self.nodes[*par].levels.len() + levels[*par];
                }
                let row =
                    node.cpt[combo]
                        .as_ref()
                        .ok_or_else(|| NetError::InsufficientSupport {
                            node: node.name.clone(),
                            combo: self.combo_key(id, combo),
                        })?;
                p *= row[levels[id]];
                if p == 0.0 {
                    break;
                }
            }
            *slot = p;
        }
        Ok(JointTable {
            cards,
            names: self.node_names(),
            probs,
        })
    }

    /// Ancestral sample of a full assignment (level indices in node order).
    pub fn sample_assignment<R: Rng>(&self, rng: &mut R) -> Result<Vec<usize>, NetError> {
        let mut levels = vec![usize::MAX; self.nodes.len()];
        for &id in &self.topo {
            let node = &self.nodes[id];
            let mut combo = 0usize;
            for p in &node.parents {
                combo = combo * self.nodes[*p].levels.len() + levels[*p];
            }
            let row = node.cpt[combo]
                .as_ref()
                .ok_or_else(|| NetError::InsufficientSupport {
                    node: node.name.clone(),
                    combo: self.combo_key(id, combo),
                })?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = row.len() - 1;
            for (l, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = l;
                    break;
                }
            }
            levels[id] = chosen;
        }
        Ok(levels)
    }

    /// Bernoulli outcome draw with success probability p*(x); deterministic
    /// given `(rng_seed, draw_index)`.
    pub fn sample_outcome(
        &self,
        x: &ContextAssignment,
        rng_seed: u64,
        draw_index: u64,
    ) -> Result<u8, NetError> {
        let p = self.target_posterior(x)?;
        let mut rng = substream(rng_seed, tag::OUTCOME, draw_index);
        Ok(if rng.gen::<f64>() < p { 1 } else { 0 })
    }

    /// Sample `n` distinct supported contexts whose posteriors cover `bins`
    /// equal-width cells of [0,1] as uniformly as the population allows.
    ///
    /// Candidate contexts come from deduplicated ancestral draws; per-bin
    /// shortfalls are redistributed to the nearest bins with surplus and
    /// reported. Deterministic given `rng_seed`.
    pub fn sample_contexts_stratified(
        &self,
        n: usize,
        bins: usize,
        rng_seed: u64,
    ) -> Result<(Vec<ContextAssignment>, StratificationReport), NetError> {
        assert!(bins >= 1, "bins must be >= 1");
        let mut rng = substream(rng_seed, tag::CONTEXTS, 0);
        let attempts = (40 * n).max(4000);
        let mut seen: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for _ in 0..attempts {
            let full = match self.sample_assignment(&mut rng) {
                Ok(f) => f,
                Err(NetError::InsufficientSupport { .. }) => continue,
                Err(e) => return Err(e),
            };
            let key: Vec<usize> = full
                .iter()
                .enumerate()
                .filter(|(id, _)| *id != self.target)
                .map(|(_, l)| *l)
                .collect();
            if seen.contains_key(&key) {
                continue;
            }
            let ctx = self.context_from_levels(&key);
            match self.target_posterior(&ctx) {
                Ok(p) => {
                    seen.insert(key, p);
                }
                Err(NetError::InsufficientSupport { .. }) | Err(NetError::ImpossibleEvidence) => {
                    continue
                }
                Err(e) => return Err(e),
            }
        }
        if seen.is_empty() {
            return Err(NetError::NotEnoughContexts {
                needed: n,
                available: 0,
            });
        }

        let mut by_bin: Vec<Vec<(Vec<usize>, f64)>> = vec![Vec::new(); bins];
        for (key, p) in seen {
            let b = ((p * bins as f64).floor() as usize).min(bins - 1);
            by_bin[b].push((key, p));
        }
        // Deterministic in-bin order: key order, then a seeded shuffle.
        for (b, members) in by_bin.iter_mut().enumerate() {
            members.sort_by(|a, c| a.0.cmp(&c.0));
            let mut bin_rng = substream(rng_seed, tag::CONTEXTS, 1 + b as u64);
            members.shuffle(&mut bin_rng);
        }

        let mut quota = vec![n / bins; bins];
        for slot in quota.iter_mut().take(n % bins) {
            *slot += 1;
        }
        let mut taken: Vec<usize> = by_bin
            .iter()
            .zip(&quota)
            .map(|(members, q)| (*q).min(members.len()))
            .collect();

        // Move unmet quota to the nearest bins that still have members left.
        let mut moved: Vec<(usize, usize, usize)> = Vec::new(); // (from_bin, to_bin, count)
        for b in 0..bins {
            let mut short = quota[b].saturating_sub(taken[b]);
            let mut dist = 1usize;
            while short > 0 && dist < bins {
                for cand in [b.checked_sub(dist), b.checked_add(dist)] {
                    let Some(c) = cand else { continue };
                    if c >= bins || short == 0 {
                        continue;
                    }
                    let avail = by_bin[c].len() - taken[c];
                    let grab = avail.min(short);
                    if grab > 0 {
                        taken[c] += grab;
                        short -= grab;
                        moved.push((b, c, grab));
                    }
                }
                dist += 1;
            }
        }
        let total: usize = taken.iter().sum();
        if total < n {
            return Err(NetError::NotEnoughContexts {
                needed: n,
                available: total,
            });
        }

        let mut contexts = Vec::with_capacity(n);
        let mut report_bins = Vec::with_capacity(bins);
        for b in 0..bins {
            for (key, _) in by_bin[b].iter().take(taken[b]) {
                contexts.push(self.context_from_levels(key));
            }
            report_bins.push(BinFill {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                available: by_bin[b].len(),
                quota: quota[b],
                taken: taken[b],
            });
        }
        let distinct_supported = by_bin.iter().map(|m| m.len()).sum();
        Ok((
            contexts,
            StratificationReport {
                bins: report_bins,
                moved,
                distinct_supported,
            },
        ))
    }

    fn context_from_levels(&self, covariate_levels: &[usize]) -> ContextAssignment {
        let mut pairs = Vec::with_capacity(covariate_levels.len());
        let mut i = 0;
        for (id, node) in self.nodes.iter().enumerate() {
            if id == self.target {
                continue;
            }
            pairs.push((node.name.clone(), node.levels[covariate_levels[i]].clone()));
            i += 1;
        }
        ContextAssignment { pairs }
    }

    /// Serialize to the on-disk JSON format.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .map(|n| serde_json::json!({ "name": n.name, "levels": n.levels }))
            .collect();
        let mut edges = Vec::new();
        for node in &self.nodes {
            for p in &node.parents {
                edges.push(serde_json::json!([self.nodes[*p].name, node.name]));
            }
        }
        let mut cpts = serde_json::Map::new();
        for (id, node) in self.nodes.iter().enumerate() {
            let mut table = serde_json::Map::new();
            for (combo, row) in node.cpt.iter().enumerate() {
                if let Some(row) = row {
                    table.insert(self.combo_key(id, combo), serde_json::json!(row));
                }
            }
            cpts.insert(node.name.clone(), serde_json::Value::Object(table));
        }
        serde_json::json!({
            "nodes": nodes,
            "edges": edges,
            "cpts": cpts,
            "target": self.target_name(),
            "min_support": self.min_support,
        })
    }

    /// Parse the on-disk JSON format produced by [`BayesNet::to_json`].
    pub fn from_json(value: &serde_json::Value) -> Result<BayesNet, NetError> {
        let parsed: NetFile =
            serde_json::from_value(value.clone()).map_err(|e| NetError::Format(e.to_string()))?;
        let structure = NetStructure {
            nodes: parsed.nodes,
            edges: parsed.edges,
            target: parsed.target,
        };
        let mut cpts: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for (node, table) in parsed.cpts {
            cpts.insert(node, table.into_iter().collect());
        }
        BayesNet::from_parts(&structure, &cpts, parsed.min_support)
    }

    /// Load either an explicit network file or a generator recipe
    /// (an object with a top-level `generator` field).
    pub fn load(path: &Path) -> Result<BayesNet, NetError> {
        let text = std::fs::read_to_string(path).map_err(|source| NetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| NetError::Format(e.to_string()))?;
        if let Some(recipe) = value.get("generator") {
            let cfg: generate::LayeredNetConfig = serde_json::from_value(recipe.clone())
                .map_err(|e| NetError::Format(e.to_string()))?;
            return generate::layered_net(&cfg);
        }
        BayesNet::from_json(&value)
    }
}

#[derive(Debug, Deserialize)]
struct NetFile {
    nodes: Vec<NodeDef>,
    edges: Vec<(String, String)>,
    cpts: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    target: String,
    #[serde(default)]
    min_support: u32,
}

/// Per-bin accounting from stratified sampling.
#[derive(Debug, Clone, Serialize)]
pub struct BinFill {
    pub lo: f64,
    pub hi: f64,
    pub available: usize,
    pub quota: usize,
    pub taken: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StratificationReport {
    pub bins: Vec<BinFill>,
    /// (short bin, donor bin, count) for each redistribution.
    pub moved: Vec<(usize, usize, usize)>,
    pub distinct_supported: usize,
}

/// Brute-force joint distribution over full assignments; the oracle that
/// variable elimination is checked against.
#[derive(Debug)]
pub struct JointTable {
    pub names: Vec<String>,
    pub cards: Vec<usize>,
    pub probs: Vec<f64>,
}

impl JointTable {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Posterior over a node's levels by direct summation.
    pub fn posterior(
        &self,
        query: &str,
        evidence: &[(String, String)],
        levels_of: &dyn Fn(&str) -> Vec<String>,
    ) -> Option<Vec<f64>> {
        let q = self.names.iter().position(|n| n == query)?;
        let ev: Option<Vec<(usize, usize)>> = evidence
            .iter()
            .map(|(name, level)| {
                let id = self.names.iter().position(|n| n == name)?;
                let lvl = levels_of(name).iter().position(|l| l == level)?;
                Some((id, lvl))
            })
            .collect();
        let ev = ev?;
        let mut acc = vec![0.0; self.cards[q]];
        let mut levels = vec![0usize; self.names.len()];
        for (idx, p) in self.probs.iter().enumerate() {
            let mut rest = idx;
            for pos in (0..self.names.len()).rev() {
                levels[pos] = rest % self.cards[pos];
                rest /= self.cards[pos];
            }
            if ev.iter().all(|(id, lvl)| levels[*id] == *lvl) {
                acc[levels[q]] += p;
            }
        }
        let total: f64 = acc.iter().sum();
        if total <= 0.0 {
            return None;
        }
        Some(acc.iter().map(|x| x / total).collect())
    }
}

/// Maximum-likelihood CPT fit: each row is the empirical child-level frequency
/// given the parent combination; combinations with fewer than `min_support`
/// samples are excluded and fail loudly when queried.
pub fn fit_cpts_mle(
    structure: &NetStructure,
    samples: &[Vec<usize>],
    min_support: u32,
) -> Result<BayesNet, NetError> {
    let Compiled {
        mut nodes,
        name_to_id,
        target,
    } = compile_structure(structure)?;
    for (i, s) in samples.iter().enumerate() {
        if s.len() != nodes.len() {
            return Err(NetError::IncompleteSample { index: i });
        }
    }
    for node_id in 0..nodes.len() {
        let n_rows = parent_combo_count(&nodes, node_id);
        let n_levels = nodes[node_id].levels.len();
        let mut counts = vec![vec![0u64; n_levels]; n_rows];
        for s in samples {
            let mut combo = 0usize;
            for p in &nodes[node_id].parents {
                combo = combo * nodes[*p].levels.len() + s[*p];
            }
            counts[combo][s[node_id]] += 1;
        }
        let rows: Vec<Option<Vec<f64>>> = counts
            .into_iter()
            .map(|c| {
                let total: u64 = c.iter().sum();
                if total < min_support as u64 || total == 0 {
                    None
                } else {
                    Some(c.iter().map(|x| *x as f64 / total as f64).collect())
                }
            })
            .collect();
        nodes[node_id].cpt = rows;
    }
    let topo = topo_order(&nodes)?;
    Ok(BayesNet {
        nodes,
        name_to_id,
        target,
        min_support,
        topo,
    })
}

struct Compiled {
    nodes: Vec<CompiledNode>,
    name_to_id: BTreeMap<String, usize>,
    target: usize,
}

fn compile_structure(structure: &NetStructure) -> Result<Compiled, NetError> {
    let mut name_to_id = BTreeMap::new();
    for (i, def) in structure.nodes.iter().enumerate() {
        if name_to_id.insert(def.name.clone(), i).is_some() {
            return Err(NetError::Format(format!("duplicate node '{}'", def.name)));
        }
        if def.levels.is_empty() {
            return Err(NetError::Format(format!(
                "node '{}' has no levels",
                def.name
            )));
        }
    }
    let mut nodes: Vec<CompiledNode> = structure
        .nodes
        .iter()
        .map(|d| CompiledNode {
            name: d.name.clone(),
            levels: d.levels.clone(),
            parents: Vec::new(),
            cpt: Vec::new(),
        })
        .collect();
    for (parent, child) in &structure.edges {
        let p = *name_to_id
            .get(parent)
            .ok_or_else(|| NetError::UnknownNode(parent.clone()))?;
        let c = *name_to_id
            .get(child)
            .ok_or_else(|| NetError::UnknownNode(child.clone()))?;
        nodes[c].parents.push(p);
    }
    let target = *name_to_id
        .get(&structure.target)
        .ok_or_else(|| NetError::UnknownNode(structure.target.clone()))?;
    if nodes[target].levels.len() != 2 {
        return Err(NetError::TargetNotBinary(structure.target.clone()));
    }
    topo_order(&nodes)?;
    Ok(Compiled {
        nodes,
        name_to_id,
        target,
    })
}

fn parent_combo_count(nodes: &[CompiledNode], node_id: usize) -> usize {
    nodes[node_id]
        .parents
        .iter()
        .map(|p| nodes[*p].levels.len())
        .product::<usize>()
        .max(1)
}

fn validate_row(node: &str, combo: &str, row: &[f64], n_levels: usize) -> Result<(), NetError> {
    if row.len() != n_levels {
        return Err(NetError::InvalidCpt {
            node: node.to_string(),
            combo: combo.to_string(),
            reason: format!(
                "row has {} entries, node has {} levels",
                row.len(),
                n_levels
            ),
        });
    }
    if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(NetError::InvalidCpt {
            node: node.to_string(),
            combo: combo.to_string(),
            reason: "negative or non-finite entry".to_string(),
        });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(NetError::InvalidCpt {
            node: node.to_string(),
            combo: combo.to_string(),
            reason: format!("row sums to {sum}, expected 1"),
        });
    }
    Ok(())
}

fn combo_index_from_key(
    nodes: &[CompiledNode],
    node_id: usize,
    key: &str,
) -> Result<usize, NetError> {
    let parents = &nodes[node_id].parents;
    if parents.is_empty() {
        if key.is_empty() {
            return Ok(0);
        }
        return Err(NetError::InvalidCpt {
            node: nodes[node_id].name.clone(),
            combo: key.to_string(),
            reason: "root node rows must use the empty combo key".to_string(),
        });
    }
    let parts: Vec<&str> = key.split('|').collect();
    if parts.len() != parents.len() {
        return Err(NetError::InvalidCpt {
            node: nodes[node_id].name.clone(),
            combo: key.to_string(),
            reason: format!(
                "combo key has {} parts, node has {} parents",
                parts.len(),
                parents.len()
            ),
        });
    }
    let mut combo = 0usize;
    for (part, p) in parts.iter().zip(parents) {
        let lvl = nodes[*p]
            .levels
            .iter()
            .position(|l| l == part)
            .ok_or_else(|| NetError::UnknownLevel {
                node: nodes[*p].name.clone(),
                level: part.to_string(),
            })?;
        combo = combo * nodes[*p].levels.len() + lvl;
    }
    Ok(combo)
}

fn topo_order(nodes: &[CompiledNode]) -> Result<Vec<usize>, NetError> {
    let n = nodes.len();
    let mut indegree = vec![0usize; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (id, node) in nodes.iter().enumerate() {
        indegree[id] = node.parents.len();
        for p in &node.parents {
            children[*p].push(id);
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|i| indegree[*i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(id) = queue.pop() {
        order.push(id);
        for &c in &children[id] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                queue.push(c);
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n).find(|i| indegree[*i] > 0).unwrap();
        return Err(NetError::Cycle(nodes[stuck].name.clone()));
    }
    Ok(order)
}
