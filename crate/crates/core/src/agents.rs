//! Simulated random-utility agents.
//!
//! These are the known-answer controls for every audit: an agent that
//! maximizes expected utility plus action-specific shocks independent of
//! (context, outcome, belief) must pass the battery, and specific departures
//! (misreported beliefs, outcome-leaking actions, banded utility flips) must
//! fail the matching test.
//!
//! Expected utility uses the probability-weighted form w(p)*u(a,1) +
//! (1-w(p))*u(a,0); the identity weighting gives the plain model, a monotone
//! weighting gives the prospect-theoretic one. Gumbel i.i.d. shocks make
//! choice probabilities an exact softmax of expected utilities.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesnet::{BayesNet, NetError};
use crate::records::{ActionLabel, CovariateDef, Dataset, DecisionRecord, Schema};
use crate::rng::{substream, tag};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent spec: {0}")]
    InvalidSpec(String),
    #[error("deterministic agent has degenerate choice probabilities (tied argmax)")]
    DegenerateChoice,
    #[error("logistic noise defines binary menus only; {0} actions have finite utility")]
    LogisticMenu(usize),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    Logistic { scale: f64 },
    GumbelIid { scale: f64 },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    Identity,
    Power {
        #[serde(alias = "param")]
        gamma: f64,
    },
    Prelec {
        #[serde(alias = "param")]
        alpha: f64,
    },
}

impl Weighting {
    /// Monotone map of [0,1] onto itself with w(0)=0, w(1)=1.
    pub fn apply(&self, p: f64) -> f64 {
        match self {
            Weighting::Identity => p,
            Weighting::Power { gamma } => p.powf(*gamma),
            Weighting::Prelec { alpha } => {
                if p <= 0.0 {
                    0.0
                } else if p >= 1.0 {
                    1.0
                } else {
                    (-(-p.ln()).powf(*alpha)).exp()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportPolicy {
    Truthful,
    Constant { c: f64 },
    GaussianNoise { sigma: f64 },
    UniformRandom,
    Coarsened { decimals: u32 },
}

/// Optional map from the ground-truth posterior to the agent's subjective
/// belief, for misspecified-belief power studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BeliefDistortion {
    Bias {
        delta: f64,
    },
    /// Sharpen (t < 1) or flatten (t > 1) around 0.5 on the log-odds scale.
    Temperature {
        t: f64,
    },
}

impl BeliefDistortion {
    pub fn apply(&self, p: f64) -> f64 {
        match self {
            BeliefDistortion::Bias { delta } => (p + delta).clamp(0.0, 1.0),
            BeliefDistortion::Temperature { t } => {
                let p = p.clamp(1e-9, 1.0 - 1e-9);
                let logit = (p / (1.0 - p)).ln() / t;
                1.0 / (1.0 + (-logit).exp())
            }
        }
    }
}

/// How actions are produced. `Rum` is the honest random-utility rule; the
/// other variants are designed violators for power studies: `ThetaLeak`
/// follows the realized outcome directly, `BandShift` adds `delta` to one
/// action's utilities whenever the belief falls in [lo, hi), flipping the
/// pairwise ranking inside the band.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionPolicy {
    #[default]
    Rum,
    ThetaLeak {
        prob: f64,
    },
    BandShift {
        lo: f64,
        hi: f64,
        action: ActionLabel,
        delta: f64,
    },
}

/// Utility table, noise model, optional probability weighting, and reporting
/// policy of a simulated agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    /// u(a, theta): rows in [Yes, No, Defer] order, columns [theta=0, theta=1].
    pub utilities: [[f64; 2]; 3],
    pub noise: Noise,
    pub weighting: Weighting,
    pub report_policy: ReportPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief_distortion: Option<BeliefDistortion>,
    #[serde(default)]
    pub action_policy: ActionPolicy,
}

impl AgentSpec {
    /// Symmetric misdiagnosis utilities with deferral as the in-between
    /// action, logit shocks, truthful reporting.
    pub fn default_logit() -> AgentSpec {
        AgentSpec {
            utilities: [[-1.0, 1.0], [1.0, -1.0], [0.0, 0.0]],
            noise: Noise::GumbelIid { scale: 1.0 },
            weighting: Weighting::Identity,
            report_policy: ReportPolicy::Truthful,
            belief_distortion: None,
            action_policy: ActionPolicy::Rum,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        match self.noise {
            Noise::Logistic { scale } | Noise::GumbelIid { scale } if scale <= 0.0 => {
                return Err(AgentError::InvalidSpec("noise scale must be > 0".into()))
            }
            _ => {}
        }
        match self.weighting {
            Weighting::Power { gamma } if gamma <= 0.0 => {
                return Err(AgentError::InvalidSpec("power gamma must be > 0".into()))
            }
            Weighting::Prelec { alpha } if alpha <= 0.0 => {
                return Err(AgentError::InvalidSpec("prelec alpha must be > 0".into()))
            }
            _ => {}
        }
        match self.report_policy {
            ReportPolicy::Constant { c } if !(0.0..=1.0).contains(&c) => {
                return Err(AgentError::InvalidSpec(
                    "constant report must be in [0,1]".into(),
                ))
            }
            ReportPolicy::GaussianNoise { sigma } if sigma < 0.0 => {
                return Err(AgentError::InvalidSpec("sigma must be >= 0".into()))
            }
            _ => {}
        }
        if let ActionPolicy::ThetaLeak { prob } = self.action_policy {
            if !(0.0..=1.0).contains(&prob) {
                return Err(AgentError::InvalidSpec(
                    "theta_leak prob must be in [0,1]".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AgentSpec, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::InvalidSpec(format!("{}: {e}", path.display())))?;
        let spec: AgentSpec = serde_json::from_str(&text)
            .map_err(|e| AgentError::InvalidSpec(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Utilities after any belief-dependent band shift.
    fn effective_utilities(&self, p: f64) -> [[f64; 2]; 3] {
        let mut u = self.utilities;
        if let ActionPolicy::BandShift {
            lo,
            hi,
            action,
            delta,
        } = self.action_policy
        {
            if p >= lo && p < hi {
                u[action.index()][0] += delta;
                u[action.index()][1] += delta;
            }
        }
        u
    }
}

fn weighted_term(w: f64, u: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * u
    }
}

/// Expected utility of each action at belief `p`:
/// w(p)*u(a,1) + (1-w(p))*u(a,0), in [Yes, No, Defer] order.
pub fn expected_utilities(spec: &AgentSpec, p: f64) -> [f64; 3] {
    let w = spec.weighting.apply(p);
    let u = spec.effective_utilities(p);
    let mut eu = [0.0; 3];
    for a in 0..3 {
        eu[a] = weighted_term(w, u[a][1]) + weighted_term(1.0 - w, u[a][0]);
    }
    eu
}

fn softmax(scores: &[f64; 3], scale: f64) -> Result<[f64; 3], AgentError> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(AgentError::InvalidSpec(
            "all expected utilities are -inf".into(),
        ));
    }
    let mut exps = [0.0; 3];
    let mut total = 0.0;
    for (i, s) in scores.iter().enumerate() {
        exps[i] = ((s - max) / scale).exp();
        total += exps[i];
    }
    Ok([exps[0] / total, exps[1] / total, exps[2] / total])
}

/// Choice distribution over the full three-action menu.
///
/// Gumbel i.i.d. noise gives Pr(a) proportional to exp(EU(a)/scale). Logistic
/// noise defines binary menus only, so it requires exactly two actions with
/// finite utility. With no noise the unique argmax gets a point mass and a
/// tie is an error.
pub fn choice_probabilities(spec: &AgentSpec, p: f64) -> Result<[f64; 3], AgentError> {
    let eu = expected_utilities(spec, p);
    match spec.noise {
        Noise::GumbelIid { scale } => softmax(&eu, scale),
        Noise::Logistic { scale } => {
            let finite: Vec<usize> = (0..3).filter(|a| eu[*a].is_finite()).collect();
            if finite.len() != 2 {
                return Err(AgentError::LogisticMenu(finite.len()));
            }
            let (a1, a2) = (finite[0], finite[1]);
            let share = 1.0 / (1.0 + (-(eu[a1] - eu[a2]) / scale).exp());
            let mut out = [0.0; 3];
            out[a1] = share;
            out[a2] = 1.0 - share;
            Ok(out)
        }
        Noise::None => {
            let max = eu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let winners: Vec<usize> = (0..3).filter(|a| eu[*a] == max).collect();
            if winners.len() != 1 {
                return Err(AgentError::DegenerateChoice);
            }
            let mut out = [0.0; 3];
            out[winners[0]] = 1.0;
            Ok(out)
        }
    }
}

/// Analytic pairwise share s(p) = Pr(a1 | {a1, a2}, p) for shock-difference
/// models; the grid oracle for the monotone test.
pub fn pairwise_share(
    spec: &AgentSpec,
    p: f64,
    a1: ActionLabel,
    a2: ActionLabel,
) -> Result<f64, AgentError> {
    let eu = expected_utilities(spec, p);
    let delta = eu[a1.index()] - eu[a2.index()];
    match spec.noise {
        // For i.i.d. Gumbel shocks the difference is logistic with the same scale.
        Noise::GumbelIid { scale } | Noise::Logistic { scale } => {
            Ok(1.0 / (1.0 + (-delta / scale).exp()))
        }
        Noise::None => Ok(if delta > 0.0 {
            1.0
        } else if delta < 0.0 {
            0.0
        } else {
            0.5
        }),
    }
}

fn gumbel_draw<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen::<f64>().clamp(1e-300, 1.0 - 1e-16);
    -(-u.ln()).ln()
}

/// One action draw: per-action shocks sampled independently of everything
/// else, argmax of EU + shock, ties broken in Yes < No < Defer order.
/// Deterministic given `(rng_seed, draw_index)`.
pub fn rum_choose(
    spec: &AgentSpec,
    p: f64,
    rng_seed: u64,
    draw_index: u64,
) -> Result<ActionLabel, AgentError> {
    let mut rng = substream(rng_seed, tag::SHOCKS, draw_index);
    let eu = expected_utilities(spec, p);
    let scored: [f64; 3] = match spec.noise {
        Noise::GumbelIid { scale } => {
            let mut s = [0.0; 3];
            for a in 0..3 {
                s[a] = eu[a] + scale * gumbel_draw(&mut rng);
            }
            s
        }
        Noise::Logistic { scale } => {
            let finite: Vec<usize> = (0..3).filter(|a| eu[*a].is_finite()).collect();
            if finite.len() != 2 {
                return Err(AgentError::LogisticMenu(finite.len()));
            }
            let share = 1.0 / (1.0 + (-(eu[finite[0]] - eu[finite[1]]) / scale).exp());
            let u: f64 = rng.gen();
            let winner = if u < share { finite[0] } else { finite[1] };
            let mut s = [f64::NEG_INFINITY; 3];
            s[winner] = 0.0;
            s
        }
        Noise::None => eu,
    };
    let mut best = 0usize;
    for a in 1..3 {
        if scored[a] > scored[best] {
            best = a;
        }
    }
    Ok(ActionLabel::ALL[best])
}

/// Report the belief under the configured policy; deterministic given
/// `(rng_seed, draw_index)`.
pub fn elicit_report(spec: &AgentSpec, p_subjective: f64, rng_seed: u64, draw_index: u64) -> f64 {
    match spec.report_policy {
        ReportPolicy::Truthful => p_subjective,
        ReportPolicy::Constant { c } => c,
        ReportPolicy::GaussianNoise { sigma } => {
            let mut rng = substream(rng_seed, tag::REPORT, draw_index);
            // Box-Muller
            let u1: f64 = rng.gen::<f64>().max(1e-300);
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            (p_subjective + sigma * z).clamp(0.0, 1.0)
        }
        ReportPolicy::UniformRandom => {
            let mut rng = substream(rng_seed, tag::REPORT, draw_index);
            rng.gen()
        }
        ReportPolicy::Coarsened { decimals } => {
            let scale = 10f64.powi(decimals as i32);
            (p_subjective * scale).round() / scale
        }
    }
}

/// Simulate a full audit dataset: stratified contexts, one outcome draw per
/// context (the covariate-outcome pairing), and per-repetition independent
/// report and shock draws. Truthful agents record belief == ground_truth.
pub fn run_episode(
    net: &BayesNet,
    spec: &AgentSpec,
    n_contexts: usize,
    repetitions: u32,
    rng_seed: u64,
) -> Result<Dataset, AgentError> {
    spec.validate()?;
    let (contexts, _report) = net.sample_contexts_stratified(n_contexts, 20, rng_seed)?;
    let schema = Schema {
        covariates: net
            .covariate_names()
            .iter()
            .map(|name| CovariateDef {
                name: name.clone(),
                levels: net.levels_of(name).expect("covariate exists").to_vec(),
            })
            .collect(),
    };
    let mut records = Vec::with_capacity(n_contexts * repetitions as usize);
    let width = (n_contexts.max(2) as f64).log10().ceil() as usize;
    for (ci, ctx) in contexts.iter().enumerate() {
        let p_star = net.target_posterior(ctx)?;
        let p_subjective = match &spec.belief_distortion {
            Some(d) => d.apply(p_star),
            None => p_star,
        };
        let theta = net.sample_outcome(ctx, rng_seed, ci as u64)?;
        let covariates: BTreeMap<String, String> = ctx.pairs.iter().cloned().collect();
        for rep in 0..repetitions {
            let draw = ci as u64 * repetitions as u64 + rep as u64;
            let belief = elicit_report(spec, p_subjective, rng_seed, draw);
            let action = match spec.action_policy {
                ActionPolicy::ThetaLeak { prob } => {
                    let mut rng = substream(rng_seed, tag::SHOCKS, draw);
                    let follow = rng.gen::<f64>() < prob;
                    match (theta, follow) {
                        (1, true) | (0, false) => ActionLabel::Yes,
                        _ => ActionLabel::No,
                    }
                }
                _ => rum_choose(spec, p_subjective, rng_seed, draw)?,
            };
            records.push(DecisionRecord {
                context_id: format!("ctx{ci:0width$}"),
                covariates: covariates.clone(),
                belief,
                action,
                outcome: theta,
                prompt_id: "std".to_string(),
                repetition: rep,
                ground_truth: Some(p_star),
                forced_decision: None,
            });
        }
    }
    Ok(Dataset { schema, records })
}
