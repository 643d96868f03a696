//! Scratch probe for tuning acceptance-control effect sizes. Ignored by
//! default; run with --ignored --nocapture while calibrating.

use belief_audit::agents::{run_episode, ActionPolicy, AgentSpec, ReportPolicy};
use belief_audit::audits::{
    ci_test, monotone_pairwise_test, predictive_sufficiency_test, CiTestConfig, MonotoneConfig,
    PredictiveConfig,
};
use belief_audit::bayesnet::generate::{layered_net, LayeredNetConfig};
use belief_audit::estimators::GbdtConfig;
use belief_audit::records::ActionLabel;
use rayon::prelude::*;

#[test]
#[ignore]
fn probe_predictive_null_calibration() {
    let net = layered_net(&LayeredNetConfig {
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    for (min_leaf, lambda, iterations) in [
        (5usize, 1.0, 60usize),
        (20, 1.0, 60),
        (50, 1.0, 60),
        (20, 5.0, 40),
        (50, 5.0, 40),
        (80, 10.0, 40),
    ] {
        let cfg = PredictiveConfig {
            folds: 5,
            gbdt: GbdtConfig {
                depth: 3,
                iterations,
                min_samples_leaf: min_leaf,
                lambda,
                ..Default::default()
            },
            bootstraps: 200,
            ..Default::default()
        };
        let agent = AgentSpec::default_logit();
        let outcomes: Vec<(f64, f64, f64)> = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let d = run_episode(&net, &agent, 200, 5, 3000 + seed).unwrap();
                let res = predictive_sufficiency_test(&d, &cfg, 3000 + seed).unwrap();
                (res.pct_improvement, res.ci.lower, res.ci.upper)
            })
            .collect();
        let covers = outcomes
            .iter()
            .filter(|(_, lo, hi)| *lo <= 0.0 && *hi >= 0.0)
            .count();
        let mean: f64 = outcomes.iter().map(|(i, _, _)| i).sum::<f64>() / 20.0;
        println!(
            "min_leaf={min_leaf} lambda={lambda} iters={iterations}: covers 0 in {covers}/20, mean impr {mean:.3}"
        );

        let leaky = AgentSpec {
            report_policy: ReportPolicy::Constant { c: 0.5 },
            action_policy: ActionPolicy::ThetaLeak { prob: 0.9 },
            ..AgentSpec::default_logit()
        };
        let hits: usize = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let d = run_episode(&net, &leaky, 200, 5, 4000 + seed).unwrap();
                let res = predictive_sufficiency_test(&d, &cfg, 4000 + seed).unwrap();
                usize::from(res.pct_improvement >= 10.0 && res.ci.lower > 0.0)
            })
            .sum();
        println!("    theta-leak flagged {hits}/20");
    }
}

#[test]
#[ignore]
fn probe_ci_power_by_net() {
    for net_seed in [5u64, 11, 23] {
        let net = layered_net(&LayeredNetConfig {
            seed: net_seed,
            ..Default::default()
        })
        .unwrap();
        let cfg = CiTestConfig {
            bootstraps: 500,
            n_perm: 199,
            ..Default::default()
        };
        let agent = AgentSpec {
            report_policy: ReportPolicy::Constant { c: 0.5 },
            ..AgentSpec::default_logit()
        };
        let outcomes: Vec<(f64, bool, bool)> = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let d = run_episode(&net, &agent, 200, 5, 2000 + seed).unwrap();
                let res = ci_test(&d, &cfg, 2000 + seed).unwrap();
                (res.cmi.value, res.perm_pvalue < 0.05, res.ci.lower > 0.0)
            })
            .collect();
        let rejected = outcomes.iter().filter(|(_, r, _)| *r).count();
        let lower = outcomes.iter().filter(|(_, _, l)| *l).count();
        let mean_cmi: f64 = outcomes.iter().map(|(c, _, _)| c).sum::<f64>() / 20.0;
        println!(
            "net {net_seed}: mean cmi {mean_cmi:.4}, rejected {rejected}/20, lower>0 {lower}/20"
        );
    }
}

#[test]
#[ignore]
fn probe_band_flip_power() {
    for (delta, lo, hi) in [
        (-2.0, 0.4, 0.6),
        (-2.5, 0.4, 0.6),
        (-2.0, 0.35, 0.65),
        (-3.0, 0.4, 0.6),
    ] {
        for net_seed in [5u64, 11] {
            let net = layered_net(&LayeredNetConfig {
                seed: net_seed,
                ..Default::default()
            })
            .unwrap();
            let flip = AgentSpec {
                action_policy: ActionPolicy::BandShift {
                    lo,
                    hi,
                    action: ActionLabel::Yes,
                    delta,
                },
                ..AgentSpec::default_logit()
            };
            let flags: usize = (0..20u64)
                .into_par_iter()
                .map(|seed| {
                    let d = run_episode(&net, &flip, 200, 5, 7000 + seed).unwrap();
                    let res = monotone_pairwise_test(&d, &MonotoneConfig::default(), 7000 + seed)
                        .unwrap();
                    usize::from(res.flagged.iter().any(|f| f.p_value < 0.05))
                })
                .sum();
            println!("net {net_seed} delta {delta} band [{lo},{hi}): flagged {flags}/20");
        }
    }
}
