//! The audit battery: five procedures that check whether elicited beliefs can
//! be the subjective probabilities of a random-utility maximizer.
//!
//! - [`ci_test`]: conditional independence of actions and outcomes given the
//!   belief, via kNN CMI with a group bootstrap CI and a local-permutation
//!   p-value; optionally on isotonic-calibrated beliefs.
//! - [`predictive_sufficiency_test`]: out-of-sample log-loss gain from adding
//!   the outcome to a boosted-tree action model, quantifying the degree of
//!   violation.
//! - [`monotone_pairwise_test`]: pairwise choice shares across belief bins
//!   must be monotone; inversions are tested with one-sided exact tests.
//! - [`prompt_consistency`] / [`rmse_vs_ground_truth`]: stability of elicited
//!   probabilities across prompts and against ground truth.
//! - [`lie_test`]: law-of-iterated-expectation coherence of the reported
//!   distribution, with an oracle-trained regressor baseline.
//!
//! Every test takes canonically sorted data, so record order on disk never
//! changes a result.

mod consistency;
mod lie;
mod monotone;

pub use consistency::{
    prompt_consistency, rmse_vs_ground_truth, ConsistencyConfig, ConsistencyResult,
};
pub use lie::{
    lie_oracle_triples, lie_test, LieBaseline, LieBaselineConfig, LieConfig, LieContextResult,
    LieResult,
};
pub use monotone::{
    monotone_pairwise_test, BinSummary, FlaggedPair, MonotoneConfig, MonotoneTestResult,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesnet::NetError;
use crate::estimators::{
    bootstrap_ci, gbdt_grouped_cv_logloss, grouped_local_permutation_pvalue, isotonic_fit, knn_cmi,
    BootstrapCI, CmiEstimate, EstimatorError, GbdtConfig,
};
use crate::records::Dataset;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("underpowered: {n} records, configured floor is {floor}")]
    Underpowered { n: usize, floor: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("context conditioning for the CI question is reported via the predictive test; the CMI test conditions on the belief only")]
    UnsupportedConditioning,
    #[error("no shared contexts between prompt '{0}' and the reference prompt")]
    NoSharedContexts(String),
    #[error("reference prompt '{prompt}' has {found} repetition(s) for context '{context}'; need at least 2")]
    NotEnoughRepetitions {
        prompt: String,
        context: String,
        found: usize,
    },
    #[error("record for context '{0}' is missing ground_truth")]
    MissingGroundTruth(String),
    #[error("context '{0}' carries inconsistent ground_truth values")]
    InconsistentGroundTruth(String),
    #[error("invalid LIE triple for context '{context}': {reason}")]
    BadTriple { context: String, reason: String },
    #[error("no context with a positive base belief; median ratio undefined")]
    AllZeroBase,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Raw,
    Isotonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    BeliefOnly,
    BeliefPlusContext,
}

/// Outcome of the conditional-independence test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiTestResult {
    pub cmi: CmiEstimate,
    pub ci: BootstrapCI,
    pub perm_pvalue: f64,
    pub variant: Variant,
    pub conditioning: Conditioning,
}

/// Outcome of the predictive-sufficiency test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveTestResult {
    pub baseline_logloss: f64,
    pub augmented_logloss: f64,
    /// 100 * (baseline - augmented) / baseline.
    pub pct_improvement: f64,
    pub ci: BootstrapCI,
    pub conditioning: Conditioning,
}

#[derive(Debug, Clone)]
pub struct CiTestConfig {
    pub k: usize,
    pub bootstraps: usize,
    pub n_perm: usize,
    pub variant: Variant,
    pub conditioning: Conditioning,
    pub level: f64,
    /// Minimum record count before the test refuses to run.
    pub min_records: usize,
}

impl Default for CiTestConfig {
    fn default() -> Self {
        CiTestConfig {
            k: 3,
            bootstraps: 500,
            n_perm: 199,
            variant: Variant::Raw,
            conditioning: Conditioning::BeliefOnly,
            level: 0.95,
            min_records: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictiveConfig {
    pub conditioning: Conditioning,
    pub folds: usize,
    pub gbdt: GbdtConfig,
    pub bootstraps: usize,
    pub level: f64,
}

impl Default for PredictiveConfig {
    fn default() -> Self {
        PredictiveConfig {
            conditioning: Conditioning::BeliefOnly,
            folds: 5,
            gbdt: GbdtConfig::default(),
            bootstraps: 500,
            level: 0.95,
        }
    }
}

/// Canonically sorted per-record columns plus context groups (record indices
/// per context, contexts in sorted order).
pub(crate) struct Extracted {
    pub actions: Vec<usize>,
    pub outcomes: Vec<usize>,
    pub beliefs: Vec<f64>,
    pub context_ids: Vec<String>,
    pub groups: Vec<Vec<usize>>,
}

pub(crate) fn extract(d: &Dataset) -> Result<Extracted, AuditError> {
    if d.records.is_empty() {
        return Err(AuditError::EmptyDataset);
    }
    let mut canon = d.clone();
    canon.canonicalize();
    let actions: Vec<usize> = canon.records.iter().map(|r| r.action.index()).collect();
    let outcomes: Vec<usize> = canon.records.iter().map(|r| r.outcome as usize).collect();
    let beliefs: Vec<f64> = canon.records.iter().map(|r| r.belief).collect();
    let context_ids: Vec<String> = canon.records.iter().map(|r| r.context_id.clone()).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, ctx) in context_ids.iter().enumerate() {
        if i > 0 && context_ids[i - 1] == *ctx {
            groups.last_mut().unwrap().push(i);
        } else {
            groups.push(vec![i]);
        }
    }
    Ok(Extracted {
        actions,
        outcomes,
        beliefs,
        context_ids,
        groups,
    })
}

/// Isotonic-calibrate beliefs against realized outcomes (the post-processing
/// re-analysis): replace each belief by the PAVA fit evaluated at it.
pub fn calibrate_beliefs(beliefs: &[f64], outcomes: &[usize]) -> Result<Vec<f64>, EstimatorError> {
    let y: Vec<f64> = outcomes.iter().map(|&t| t as f64).collect();
    let fit = isotonic_fit(beliefs, &y)?;
    Ok(beliefs.iter().map(|&b| fit.predict(b)).collect())
}

/// Conditional-independence test of H0: I(A; theta | p) = 0.
///
/// Returns the kNN CMI estimate, a context-group bootstrap CI, and a
/// local-permutation p-value. Groups are resampled and permuted whole, which
/// respects the one-outcome-per-context design; datasets without repeated
/// contexts degrade to per-record resampling.
pub fn ci_test(d: &Dataset, cfg: &CiTestConfig, rng_seed: u64) -> Result<CiTestResult, AuditError> {
    if cfg.conditioning == Conditioning::BeliefPlusContext {
        return Err(AuditError::UnsupportedConditioning);
    }
    let ex = extract(d)?;
    if ex.actions.len() < cfg.min_records {
        return Err(AuditError::Underpowered {
            n: ex.actions.len(),
            floor: cfg.min_records,
        });
    }
    let beliefs = match cfg.variant {
        Variant::Raw => ex.beliefs.clone(),
        Variant::Isotonic => calibrate_beliefs(&ex.beliefs, &ex.outcomes)?,
    };

    let cmi = knn_cmi(&ex.actions, &ex.outcomes, &beliefs, cfg.k)?;
    let ci = bootstrap_ci(
        |idx: &[usize]| {
            let a: Vec<usize> = idx.iter().map(|&i| ex.actions[i]).collect();
            let t: Vec<usize> = idx.iter().map(|&i| ex.outcomes[i]).collect();
            let p: Vec<f64> = idx.iter().map(|&i| beliefs[i]).collect();
            Ok(knn_cmi(&a, &t, &p, cfg.k)?.value)
        },
        &ex.groups,
        cfg.bootstraps,
        cfg.level,
        rng_seed,
    )?;
    let perm_pvalue = grouped_local_permutation_pvalue(
        &ex.actions,
        &ex.outcomes,
        &beliefs,
        &ex.groups,
        cfg.k,
        cfg.n_perm,
        rng_seed,
    )?;
    Ok(CiTestResult {
        cmi,
        ci,
        perm_pvalue,
        variant: cfg.variant,
        conditioning: cfg.conditioning,
    })
}

fn one_hot_features(d: &Dataset) -> Vec<Vec<f64>> {
    let mut canon = d.clone();
    canon.canonicalize();
    canon
        .records
        .iter()
        .map(|r| {
            let mut row = Vec::new();
            for def in &d.schema.covariates {
                let level = r.covariates.get(&def.name);
                for l in &def.levels {
                    row.push(if level == Some(l) { 1.0 } else { 0.0 });
                }
            }
            row
        })
        .collect()
}

/// Predictive-sufficiency test: grouped-CV log-loss of an action model on the
/// belief (plus context, when configured) versus the same features plus the
/// realized outcome. A CI for the percent improvement that excludes zero from
/// above signals that the belief is not decision-sufficient.
pub fn predictive_sufficiency_test(
    d: &Dataset,
    cfg: &PredictiveConfig,
    rng_seed: u64,
) -> Result<PredictiveTestResult, AuditError> {
    let ex = extract(d)?;
    let n = ex.actions.len();

    // Class indices remapped to the actions actually present, Yes < No < Defer.
    let mut present: Vec<usize> = ex.actions.clone();
    present.sort_unstable();
    present.dedup();
    let class_names: Vec<String> = present
        .iter()
        .map(|&a| crate::records::ActionLabel::ALL[a].as_str().to_string())
        .collect();
    let labels: Vec<usize> = ex
        .actions
        .iter()
        .map(|a| present.iter().position(|p| p == a).unwrap())
        .collect();

    let mut base_rows: Vec<Vec<f64>> = ex.beliefs.iter().map(|&b| vec![b]).collect();
    if cfg.conditioning == Conditioning::BeliefPlusContext {
        let onehot = one_hot_features(d);
        for (row, extra) in base_rows.iter_mut().zip(onehot) {
            row.extend(extra);
        }
    }
    let mut augmented_rows = base_rows.clone();
    for (row, &t) in augmented_rows.iter_mut().zip(&ex.outcomes) {
        row.push(t as f64);
    }

    let cv_base = gbdt_grouped_cv_logloss(
        &base_rows,
        &labels,
        &ex.context_ids,
        &class_names,
        cfg.folds,
        &cfg.gbdt,
        rng_seed,
    )?;
    let cv_aug = gbdt_grouped_cv_logloss(
        &augmented_rows,
        &labels,
        &ex.context_ids,
        &class_names,
        cfg.folds,
        &cfg.gbdt,
        rng_seed,
    )?;

    let pct = improvement_pct(cv_base.mean_logloss, cv_aug.mean_logloss);
    let ci = bootstrap_ci(
        |idx: &[usize]| {
            let base: f64 =
                idx.iter().map(|&i| cv_base.per_record[i]).sum::<f64>() / idx.len() as f64;
            let aug: f64 =
                idx.iter().map(|&i| cv_aug.per_record[i]).sum::<f64>() / idx.len() as f64;
            Ok(improvement_pct(base, aug))
        },
        &ex.groups,
        cfg.bootstraps,
        cfg.level,
        rng_seed,
    )?;
    let _ = n;
    Ok(PredictiveTestResult {
        baseline_logloss: cv_base.mean_logloss,
        augmented_logloss: cv_aug.mean_logloss,
        pct_improvement: pct,
        ci,
        conditioning: cfg.conditioning,
    })
}

fn improvement_pct(baseline: f64, augmented: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * (baseline - augmented) / baseline
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{run_episode, ActionPolicy, AgentSpec, ReportPolicy};
    use crate::bayesnet::generate::{layered_net, LayeredNetConfig};

    fn control_net() -> crate::bayesnet::BayesNet {
        layered_net(&LayeredNetConfig {
            seed: 5,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn ci_test_underpowered_floor_applies() {
        let net = control_net();
        let d = run_episode(&net, &AgentSpec::default_logit(), 5, 2, 1).unwrap();
        let err = ci_test(&d, &CiTestConfig::default(), 1).unwrap_err();
        assert!(matches!(err, AuditError::Underpowered { n: 10, floor: 50 }));
    }

    #[test]
    fn ci_test_rejects_context_conditioning() {
        let net = control_net();
        let d = run_episode(&net, &AgentSpec::default_logit(), 20, 5, 1).unwrap();
        let cfg = CiTestConfig {
            conditioning: Conditioning::BeliefPlusContext,
            ..Default::default()
        };
        assert!(matches!(
            ci_test(&d, &cfg, 1),
            Err(AuditError::UnsupportedConditioning)
        ));
    }

    #[test]
    fn ci_test_accepts_truthful_agent_and_rejects_constant_reporter() {
        let net = control_net();
        let cfg = CiTestConfig {
            bootstraps: 200,
            n_perm: 99,
            ..Default::default()
        };

        let truthful = run_episode(&net, &AgentSpec::default_logit(), 100, 5, 11).unwrap();
        let res = ci_test(&truthful, &cfg, 11).unwrap();
        assert!(res.perm_pvalue > 0.05, "truthful p {}", res.perm_pvalue);

        let constant = AgentSpec {
            report_policy: ReportPolicy::Constant { c: 0.5 },
            ..AgentSpec::default_logit()
        };
        let violator = run_episode(&net, &constant, 100, 5, 11).unwrap();
        let res = ci_test(&violator, &cfg, 11).unwrap();
        assert!(
            res.perm_pvalue <= 0.01,
            "constant reporter p {}",
            res.perm_pvalue
        );
        assert!(
            res.ci.lower > 0.0,
            "constant reporter CI [{}, {}]",
            res.ci.lower,
            res.ci.upper
        );
    }

    #[test]
    fn ci_test_is_record_order_invariant() {
        let net = control_net();
        let mut d = run_episode(&net, &AgentSpec::default_logit(), 60, 5, 3).unwrap();
        let cfg = CiTestConfig {
            bootstraps: 100,
            n_perm: 99,
            ..Default::default()
        };
        let before = ci_test(&d, &cfg, 5).unwrap();
        d.records.reverse();
        let after = ci_test(&d, &cfg, 5).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn isotonic_variant_runs_and_keeps_conclusions() {
        let net = control_net();
        let cfg = CiTestConfig {
            bootstraps: 150,
            n_perm: 99,
            variant: Variant::Isotonic,
            ..Default::default()
        };
        let truthful = run_episode(&net, &AgentSpec::default_logit(), 100, 5, 17).unwrap();
        let res = ci_test(&truthful, &cfg, 17).unwrap();
        assert_eq!(res.variant, Variant::Isotonic);
        assert!(
            res.perm_pvalue > 0.05,
            "truthful isotonic p {}",
            res.perm_pvalue
        );
    }

    #[test]
    fn predictive_test_flags_theta_leak_and_passes_truthful() {
        let net = control_net();
        let cfg = PredictiveConfig {
            folds: 5,
            gbdt: GbdtConfig {
                depth: 3,
                iterations: 60,
                ..Default::default()
            },
            bootstraps: 200,
            ..Default::default()
        };

        let leaky = AgentSpec {
            report_policy: ReportPolicy::Constant { c: 0.5 },
            action_policy: ActionPolicy::ThetaLeak { prob: 0.9 },
            ..AgentSpec::default_logit()
        };
        let d = run_episode(&net, &leaky, 100, 5, 23).unwrap();
        let res = predictive_sufficiency_test(&d, &cfg, 23).unwrap();
        assert!(
            res.pct_improvement >= 10.0,
            "improvement {}",
            res.pct_improvement
        );
        assert!(
            res.ci.lower > 0.0,
            "CI [{}, {}]",
            res.ci.lower,
            res.ci.upper
        );

        let truthful = run_episode(&net, &AgentSpec::default_logit(), 100, 5, 23).unwrap();
        let res = predictive_sufficiency_test(&truthful, &cfg, 23).unwrap();
        assert!(
            res.ci.lower <= 0.0 && res.ci.upper >= 0.0,
            "truthful CI [{}, {}] should cover 0",
            res.ci.lower,
            res.ci.upper
        );
    }

    #[test]
    fn predictive_test_context_conditioning_runs() {
        let net = control_net();
        let cfg = PredictiveConfig {
            conditioning: Conditioning::BeliefPlusContext,
            folds: 3,
            gbdt: GbdtConfig {
                depth: 2,
                iterations: 20,
                ..Default::default()
            },
            bootstraps: 50,
            ..Default::default()
        };
        let d = run_episode(&net, &AgentSpec::default_logit(), 40, 5, 29).unwrap();
        let res = predictive_sufficiency_test(&d, &cfg, 29).unwrap();
        assert_eq!(res.conditioning, Conditioning::BeliefPlusContext);
        assert!(res.baseline_logloss > 0.0);
    }

    #[test]
    fn results_serialize_round_trip_bit_exactly() {
        let net = control_net();
        let d = run_episode(&net, &AgentSpec::default_logit(), 60, 5, 31).unwrap();
        let cfg = CiTestConfig {
            bootstraps: 100,
            n_perm: 99,
            ..Default::default()
        };
        let res = ci_test(&d, &cfg, 31).unwrap();
        let json = serde_json::to_string(&res).unwrap();
        let back: CiTestResult = serde_json::from_str(&json).unwrap();
        assert_eq!(res, back);
        assert_eq!(json, serde_json::to_string(&back).unwrap());
    }
}
