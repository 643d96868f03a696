//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (run with --nocapture to see them). The battery rests
//! on oracle equivalence, exact invariants, and size/power behavior on
//! simulated controls; everything is offline and seed-deterministic.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use belief_audit::agents::{run_episode, ActionPolicy, AgentSpec, ReportPolicy, Weighting};
use belief_audit::audits::{
    ci_test, lie_oracle_triples, monotone_pairwise_test, predictive_sufficiency_test, CiTestConfig,
    MonotoneConfig, PredictiveConfig, Variant,
};
use belief_audit::bayesnet::generate::{
    layered_net, random_binary_dag, LayeredNetConfig, TargetRole,
};
use belief_audit::bayesnet::{BayesNet, ContextAssignment};
use belief_audit::estimators::{
    fisher_exact_one_sided, isotonic_fit, knn_cmi, ContingencyTable2x2, GbdtConfig,
};
use belief_audit::records::ActionLabel;
use belief_audit::rng::{substream, tag};
use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::Rng;
use rayon::prelude::*;

/// Mid-range-rich net: plenty of posterior mass near 0.5, where the banded
/// utility flip bites (used for the monotone power control).
fn control_net() -> BayesNet {
    layered_net(&LayeredNetConfig {
        seed: 5,
        ..Default::default()
    })
    .unwrap()
}

/// Signal-rich net (the shipped heart-like recipe): posteriors spread to the
/// extremes, so misreported beliefs carry a detectable action-outcome link.
fn signal_net() -> BayesNet {
    layered_net(&LayeredNetConfig {
        seed: 11,
        ..Default::default()
    })
    .unwrap()
}

fn truthful() -> AgentSpec {
    AgentSpec::default_logit()
}

fn constant_reporter() -> AgentSpec {
    AgentSpec {
        report_policy: ReportPolicy::Constant { c: 0.5 },
        ..AgentSpec::default_logit()
    }
}

// ---------------------------------------------------------------------------
// 1. Inference oracle: variable elimination vs joint enumeration
// ---------------------------------------------------------------------------

#[test]
fn crit_01_inference_oracle_matches_enumeration() {
    let start = Instant::now();
    let mut checked = 0usize;
    for dag in 0..50u64 {
        let n_nodes = 6 + (dag % 7) as usize; // 6..=12
        let net = random_binary_dag(n_nodes, 3, dag);
        let joint = net.enumerate_joint().unwrap();
        let names = net.node_names();
        let levels_of = |name: &str| net.levels_of(name).unwrap().to_vec();
        let mut rng = substream(dag, tag::POWER_CELL, 77);
        for _ in 0..20 {
            let mut picks: Vec<usize> = (0..names.len()).collect();
            for i in (1..picks.len()).rev() {
                let j = rng.gen_range(0..=i);
                picks.swap(i, j);
            }
            let query = &names[picks[0]];
            let n_ev = rng.gen_range(0..=3.min(names.len() - 1));
            let evidence: Vec<(String, String)> = picks[1..1 + n_ev]
                .iter()
                .map(|&i| (names[i].clone(), rng.gen_range(0..2u8).to_string()))
                .collect();
            let oracle = joint.posterior(query, &evidence, &levels_of);
            let ve = net.eliminate(
                query,
                &ContextAssignment {
                    pairs: evidence.clone(),
                },
            );
            match (oracle, ve) {
                (Some(oracle), Ok(ve)) => {
                    for (a, b) in ve.iter().zip(&oracle) {
                        assert!(
                            (a - b).abs() < 1e-10,
                            "dag {dag} query {query} evidence {evidence:?}: {ve:?} vs {oracle:?}"
                        );
                    }
                    checked += 1;
                }
                (None, Err(_)) => {} // both sides agree the evidence is impossible
                (oracle, ve) => {
                    panic!("dag {dag}: oracle {oracle:?} vs ve {ve:?} disagree on feasibility")
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 60 s");
    println!("PASS criterion 1: {checked} posterior checks on 50 random DAGs within 1e-10 in {elapsed:?}");
}

// ---------------------------------------------------------------------------
// 2. Exact-test oracle: Fisher vs rational hypergeometric enumeration
// ---------------------------------------------------------------------------

fn binomial_big(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let mut num = BigUint::from(1u32);
    let mut den = BigUint::from(1u32);
    for i in 0..k.min(n - k) {
        num *= n - i;
        den *= i + 1;
    }
    num / den
}

fn fisher_oracle(t: &ContingencyTable2x2) -> f64 {
    let n = t.total();
    let row1 = t.a + t.b;
    let col1 = t.a + t.c;
    let hi = row1.min(col1);
    let mut tail = BigUint::from(0u32);
    for x in t.a..=hi {
        tail += binomial_big(col1, x) * binomial_big(n - col1, row1 - x);
    }
    tail.to_f64().unwrap() / binomial_big(n, row1).to_f64().unwrap()
}

#[test]
fn crit_02_fisher_matches_hypergeometric_enumeration() {
    let start = Instant::now();
    // exhaustive over all tables with total <= 40
    let mut exhaustive = 0u64;
    let mut max_err = 0.0f64;
    for total in 1..=40u64 {
        for a in 0..=total {
            for b in 0..=(total - a) {
                for c in 0..=(total - a - b) {
                    let t = ContingencyTable2x2 {
                        a,
                        b,
                        c,
                        d: total - a - b - c,
                    };
                    let err = (fisher_exact_one_sided(&t).unwrap() - fisher_oracle(&t)).abs();
                    assert!(err <= 1e-12, "table {t:?}: err {err}");
                    max_err = max_err.max(err);
                    exhaustive += 1;
                }
            }
        }
    }
    // 1000 random tables with total <= 200
    let mut rng = substream(2, tag::POWER_CELL, 2);
    for _ in 0..1000 {
        let total = rng.gen_range(4..=200u64);
        let a = rng.gen_range(0..=total);
        let b = rng.gen_range(0..=(total - a));
        let c = rng.gen_range(0..=(total - a - b));
        let t = ContingencyTable2x2 {
            a,
            b,
            c,
            d: total - a - b - c,
        };
        let err = (fisher_exact_one_sided(&t).unwrap() - fisher_oracle(&t)).abs();
        assert!(err <= 1e-12, "table {t:?}: err {err}");
        max_err = max_err.max(err);
    }
    println!(
        "PASS criterion 2: {exhaustive} exhaustive + 1000 random tables, max |err| {max_err:.2e} in {:?}",
        start.elapsed()
    );
}

// ---------------------------------------------------------------------------
// 3. CMI estimator accuracy on the closed-form constructions
// ---------------------------------------------------------------------------

#[test]
fn crit_03_cmi_estimator_hits_the_analytic_values() {
    let start = Instant::now();
    let n = 2000;

    let mut cluster_estimates = Vec::new();
    let mut coupling_estimates = Vec::new();
    for seed in 0..10u64 {
        let mut rng = substream(seed, tag::POWER_CELL, 3);
        // two clusters: p=0.2 couples A to theta, p=0.8 makes them independent
        let mut a = Vec::new();
        let mut theta = Vec::new();
        let mut p = Vec::new();
        for _ in 0..n {
            if rng.gen::<bool>() {
                let t = rng.gen_range(0..2usize);
                a.push(t);
                theta.push(t);
                p.push(0.2);
            } else {
                a.push(rng.gen_range(0..2usize));
                theta.push(rng.gen_range(0..2usize));
                p.push(0.8);
            }
        }
        cluster_estimates.push(knn_cmi(&a, &theta, &p, 3).unwrap().value);

        // deterministic coupling: A = theta regardless of p
        let theta2: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let p2: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        coupling_estimates.push(knn_cmi(&theta2.clone(), &theta2, &p2, 3).unwrap().value);
    }
    let cluster_mean = cluster_estimates.iter().sum::<f64>() / 10.0;
    let coupling_mean = coupling_estimates.iter().sum::<f64>() / 10.0;
    let cluster_truth = 0.5 * 2f64.ln();
    let coupling_truth = 2f64.ln();
    assert!(
        (cluster_mean - cluster_truth).abs() <= 0.05,
        "two-cluster mean {cluster_mean} vs {cluster_truth}"
    );
    assert!(
        (coupling_mean - coupling_truth).abs() <= 0.05,
        "coupling mean {coupling_mean} vs {coupling_truth}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}, budget 2 min");
    println!(
        "PASS criterion 3: two-cluster {cluster_mean:.4} (truth {cluster_truth:.4}), coupling {coupling_mean:.4} (truth {coupling_truth:.4}) in {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// 4-5. CI-test size and power on simulated controls
// ---------------------------------------------------------------------------

#[test]
fn crit_04_ci_test_size_on_truthful_agents() {
    let net = signal_net();
    let cfg = CiTestConfig {
        bootstraps: 100,
        n_perm: 199,
        ..Default::default()
    };
    let agent = truthful();
    let rejections: Vec<bool> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let d = run_episode(&net, &agent, 200, 5, 1000 + seed).unwrap();
            ci_test(&d, &cfg, 1000 + seed).unwrap().perm_pvalue < 0.05
        })
        .collect();
    let rate = rejections.iter().filter(|r| **r).count() as f64 / 20.0;
    assert!(rate <= 0.10, "size {rate} exceeds 0.10");
    println!("PASS criterion 4: truthful rejection rate {rate:.2} <= 0.10 over 20 seeds");
}

#[test]
fn crit_05_ci_test_power_on_constant_reporters() {
    let net = signal_net();
    let cfg = CiTestConfig {
        bootstraps: 500,
        n_perm: 199,
        ..Default::default()
    };
    let agent = constant_reporter();
    let outcomes: Vec<(bool, bool)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let d = run_episode(&net, &agent, 200, 5, 2000 + seed).unwrap();
            let res = ci_test(&d, &cfg, 2000 + seed).unwrap();
            (res.perm_pvalue < 0.05, res.ci.lower > 0.0)
        })
        .collect();
    let rejected = outcomes.iter().filter(|(r, _)| *r).count();
    let positive_lower = outcomes.iter().filter(|(_, l)| *l).count();
    assert!(
        rejected >= 18,
        "rejection {rejected}/20 < 18 (rate >= 0.90 required)"
    );
    assert!(
        positive_lower >= 18,
        "CI lower bound > 0 in only {positive_lower}/20 seeds"
    );
    println!(
        "PASS criterion 5: constant reporter rejected {rejected}/20, CI above 0 in {positive_lower}/20"
    );
}

// ---------------------------------------------------------------------------
// 6. Predictive-test size and power
// ---------------------------------------------------------------------------

#[test]
fn crit_06_predictive_test_size_and_power() {
    let net = signal_net();
    let cfg = PredictiveConfig {
        folds: 5,
        gbdt: GbdtConfig {
            depth: 3,
            iterations: 60,
            min_samples_leaf: 20,
            ..Default::default()
        },
        bootstraps: 200,
        ..Default::default()
    };

    let agent = truthful();
    let truthful_covers: Vec<bool> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let d = run_episode(&net, &agent, 200, 5, 3000 + seed).unwrap();
            let res = predictive_sufficiency_test(&d, &cfg, 3000 + seed).unwrap();
            res.ci.lower <= 0.0 && res.ci.upper >= 0.0
        })
        .collect();
    let covered = truthful_covers.iter().filter(|c| **c).count();
    assert!(
        covered >= 17,
        "truthful CI covers 0 in only {covered}/20 seeds"
    );

    let leaky = AgentSpec {
        report_policy: ReportPolicy::Constant { c: 0.5 },
        action_policy: ActionPolicy::ThetaLeak { prob: 0.9 },
        ..AgentSpec::default_logit()
    };
    let leak_hits: Vec<bool> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let d = run_episode(&net, &leaky, 200, 5, 4000 + seed).unwrap();
            let res = predictive_sufficiency_test(&d, &cfg, 4000 + seed).unwrap();
            res.pct_improvement >= 10.0 && res.ci.lower > 0.0
        })
        .collect();
    let hits = leak_hits.iter().filter(|h| **h).count();
    assert!(hits >= 18, "theta-leak flagged in only {hits}/20 seeds");
    println!(
        "PASS criterion 6: truthful CI covers 0 in {covered}/20, theta-leak flagged in {hits}/20"
    );
}

// ---------------------------------------------------------------------------
// 7. Monotone-test size (plain and PT) and power (banded utility flip)
// ---------------------------------------------------------------------------

#[test]
fn crit_07_monotone_test_size_and_power() {
    let net = control_net();
    let cfg = MonotoneConfig::default(); // Yes/No, K=5, alpha=0.05

    let plain = truthful();
    let pt = AgentSpec {
        weighting: Weighting::Power { gamma: 2.0 },
        ..AgentSpec::default_logit()
    };
    for (name, agent, base_seed) in [("logit", &plain, 5000u64), ("pt-power2", &pt, 6000)] {
        let zero_rates: Vec<bool> = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let d = run_episode(&net, agent, 200, 5, base_seed + seed).unwrap();
                let res = monotone_pairwise_test(&d, &cfg, base_seed + seed).unwrap();
                res.significant_violation_rate == 0.0
            })
            .collect();
        let zeros = zero_rates.iter().filter(|z| **z).count();
        assert!(
            zeros >= 18,
            "{name}: zero violation rate in only {zeros}/20 seeds"
        );
        println!("PASS criterion 7 (size, {name}): zero violations in {zeros}/20 seeds");
    }

    let flip = AgentSpec {
        action_policy: ActionPolicy::BandShift {
            lo: 0.4,
            hi: 0.6,
            action: ActionLabel::Yes,
            delta: -2.5,
        },
        ..AgentSpec::default_logit()
    };
    let flags: Vec<bool> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let d = run_episode(&net, &flip, 200, 5, 7000 + seed).unwrap();
            let res = monotone_pairwise_test(&d, &cfg, 7000 + seed).unwrap();
            res.flagged.iter().any(|f| f.p_value < 0.05)
        })
        .collect();
    let flagged = flags.iter().filter(|f| **f).count();
    assert!(
        flagged >= 18,
        "band flip flagged in only {flagged}/20 seeds"
    );
    println!("PASS criterion 7 (power): mid-band utility flip flagged in {flagged}/20 seeds");
}

// ---------------------------------------------------------------------------
// 8. Coherence exactness and linearity
// ---------------------------------------------------------------------------

#[test]
fn crit_08_lie_exactness_and_linearity() {
    for (role, net_seed) in [(TargetRole::Leaf, 5u64), (TargetRole::Hub, 23)] {
        let net = layered_net(&LayeredNetConfig {
            target_role: role,
            seed: net_seed,
            ..Default::default()
        })
        .unwrap();
        let z = "find0";
        let keep: Vec<String> = net
            .covariate_names()
            .into_iter()
            .filter(|c| c != z)
            .collect();
        let (all, _) = net.sample_contexts_stratified(40, 10, 8).unwrap();
        let contexts: Vec<ContextAssignment> = all
            .iter()
            .map(|c| ContextAssignment {
                pairs: c
                    .pairs
                    .iter()
                    .filter(|(n, _)| keep.contains(n))
                    .cloned()
                    .collect(),
            })
            .collect();
        let (mut triples, _) = lie_oracle_triples(&net, &contexts, z).unwrap();
        for t in &triples {
            let mixture: f64 = t
                .bin_beliefs
                .iter()
                .zip(&t.bin_weights)
                .map(|(b, w)| b * w)
                .sum();
            let delta = (t.base_belief - mixture).abs();
            assert!(delta <= 1e-12, "{}: delta {delta}", t.context_id);
        }
        // single-cell perturbation: delta = eps * weight exactly
        for t in &mut triples {
            let w = t.bin_weights[0];
            let eps = 1e-3f64.min(1.0 - t.bin_beliefs[0]);
            t.bin_beliefs[0] += eps;
            let mixture: f64 = t
                .bin_beliefs
                .iter()
                .zip(&t.bin_weights)
                .map(|(b, w)| b * w)
                .sum();
            let delta = (t.base_belief - mixture).abs();
            assert!(
                (delta - eps * w).abs() <= 1e-12,
                "{}: {delta} vs {}",
                t.context_id,
                eps * w
            );
        }
    }
    println!("PASS criterion 8: oracle triples exact to 1e-12 and perturbation-linear on leaf and hub nets");
}

// ---------------------------------------------------------------------------
// 9. Isotonic correctness and re-analysis stability
// ---------------------------------------------------------------------------

/// Minimum SSE over consecutive-block partitions with nondecreasing means;
/// the optimal monotone fit is one of them.
fn isotonic_partition_min(prefix: &[f64], prefix_sq: &[f64], n: usize) -> f64 {
    let mut best = f64::INFINITY;
    for mask in 0..(1u32 << (n - 1)) {
        let mut sse = 0.0;
        let mut start = 0usize;
        let mut prev_mean = f64::NEG_INFINITY;
        let mut ok = true;
        for end in 1..=n {
            if end != n && (mask >> (end - 1)) & 1 == 0 {
                continue;
            }
            let len = (end - start) as f64;
            let total = prefix[end] - prefix[start];
            let mean = total / len;
            if mean < prev_mean - 1e-15 {
                ok = false;
                break;
            }
            sse += (prefix_sq[end] - prefix_sq[start]) - total * total / len;
            prev_mean = mean;
            start = end;
        }
        if ok && sse < best {
            best = sse;
        }
    }
    best
}

#[test]
fn crit_09_isotonic_correctness_and_reanalysis() {
    let start = Instant::now();

    // (a) nondecreasing on 1000 random inputs
    let mut rng = substream(9, tag::POWER_CELL, 9);
    for _ in 0..1000 {
        let n = rng.gen_range(1..60usize);
        let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let fit = isotonic_fit(&x, &y).unwrap();
        assert!(fit.levels.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    }

    // (b) SSE equals the exhaustive monotone minimum for every input of
    // length <= 6 on the 0.05 grid
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let mut max_err = 0.0f64;
    for len in 1..=5usize {
        let mut counter = vec![0usize; len];
        let xs: Vec<f64> = (0..len).map(|i| i as f64).collect();
        loop {
            let y: Vec<f64> = counter.iter().map(|&i| grid[i]).collect();
            let fit = isotonic_fit(&xs, &y).unwrap();
            let mut prefix = vec![0.0; len + 1];
            let mut prefix_sq = vec![0.0; len + 1];
            for i in 0..len {
                prefix[i + 1] = prefix[i] + y[i];
                prefix_sq[i + 1] = prefix_sq[i] + y[i] * y[i];
            }
            let oracle = isotonic_partition_min(&prefix, &prefix_sq, len);
            let err = (fit.sse(&xs, &y) - oracle).abs();
            assert!(err <= 1e-9, "y {y:?}: sse {} vs {oracle}", fit.sse(&xs, &y));
            max_err = max_err.max(err);
            // odometer
            let mut pos = 0;
            loop {
                if pos == len {
                    break;
                }
                counter[pos] += 1;
                if counter[pos] <= 20 {
                    break;
                }
                counter[pos] = 0;
                pos += 1;
            }
            if pos == len {
                break;
            }
        }
    }
    // length 6 in parallel over the leading coordinate
    let len = 6usize;
    let xs: Vec<f64> = (0..len).map(|i| i as f64).collect();
    let worst: f64 = (0..=20usize)
        .into_par_iter()
        .map(|first| {
            let mut local_max = 0.0f64;
            let mut counter = vec![0usize; len - 1];
            let mut y = vec![0.0; len];
            y[0] = grid[first];
            loop {
                for (i, &c) in counter.iter().enumerate() {
                    y[i + 1] = grid[c];
                }
                let fit = isotonic_fit(&xs, &y).unwrap();
                let mut prefix = [0.0; 7];
                let mut prefix_sq = [0.0; 7];
                for i in 0..len {
                    prefix[i + 1] = prefix[i] + y[i];
                    prefix_sq[i + 1] = prefix_sq[i] + y[i] * y[i];
                }
                let oracle = isotonic_partition_min(&prefix, &prefix_sq, len);
                let err = (fit.sse(&xs, &y) - oracle).abs();
                assert!(err <= 1e-9, "y {y:?}: {err}");
                local_max = local_max.max(err);
                let mut pos = 0;
                loop {
                    if pos == len - 1 {
                        break;
                    }
                    counter[pos] += 1;
                    if counter[pos] <= 20 {
                        break;
                    }
                    counter[pos] = 0;
                    pos += 1;
                }
                if pos == len - 1 {
                    break;
                }
            }
            local_max
        })
        .reduce(|| 0.0, f64::max);
    max_err = max_err.max(worst);

    // (c) isotonic re-analysis preserves the size/power conclusions
    let net = control_net();
    let cfg = CiTestConfig {
        bootstraps: 100,
        n_perm: 99,
        variant: Variant::Isotonic,
        ..Default::default()
    };
    let agent_t = truthful();
    let agent_c = constant_reporter();
    let truthful_ok: Vec<bool> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let d = run_episode(&net, &agent_t, 200, 5, 8000 + seed).unwrap();
            ci_test(&d, &cfg, 8000 + seed).unwrap().perm_pvalue >= 0.05
        })
        .collect();
    let constant_rejected: Vec<bool> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let d = run_episode(&net, &agent_c, 200, 5, 9000 + seed).unwrap();
            ci_test(&d, &cfg, 9000 + seed).unwrap().perm_pvalue < 0.05
        })
        .collect();
    let unrejected = truthful_ok.iter().filter(|x| **x).count();
    let rejected = constant_rejected.iter().filter(|x| **x).count();
    assert!(
        unrejected >= 17,
        "isotonic truthful unrejected in only {unrejected}/20"
    );
    assert!(
        rejected >= 17,
        "isotonic constant rejected in only {rejected}/20"
    );

    let elapsed = start.elapsed();
    println!(
        "PASS criterion 9: PAVA monotone, exhaustive grid minimum matched (max err {max_err:.2e}), isotonic re-analysis keeps truthful unrejected {unrejected}/20 and constant rejected {rejected}/20 in {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// 10. End-to-end determinism of the binary across runs and thread counts
// ---------------------------------------------------------------------------

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn run_binary(args: &[&str]) {
    let output = Command::new(env!("CARGO_BIN_EXE_belief-audit"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "belief-audit {args:?} failed:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

fn pipeline(dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    std::fs::create_dir_all(dir).unwrap();
    let records = dir.join("run.jsonl");
    let lie = dir.join("lie.jsonl");
    let bundle = dir.join("bundle");
    run_binary(&[
        "--threads",
        threads,
        "simulate",
        "--net",
        repo_path("configs/net_heartlike.json").to_str().unwrap(),
        "--agent",
        repo_path("configs/agent_truthful.json").to_str().unwrap(),
        "--n",
        "100",
        "--reps",
        "5",
        "--seed",
        "7",
        "--out",
        records.to_str().unwrap(),
        "--lie-out",
        lie.to_str().unwrap(),
        "--z-node",
        "find0",
    ]);
    run_binary(&[
        "--threads",
        threads,
        "audit",
        "--records",
        records.to_str().unwrap(),
        "--out",
        bundle.to_str().unwrap(),
        "--seed",
        "7",
        "--bootstraps",
        "200",
        "--n-perm",
        "99",
        "--depth",
        "3",
        "--iterations",
        "50",
        "--lie-triples",
        lie.to_str().unwrap(),
        "--net",
        repo_path("configs/net_heartlike.json").to_str().unwrap(),
    ]);
    let mut files = Vec::new();
    files.push(("run.jsonl".to_string(), std::fs::read(&records).unwrap()));
    files.push(("lie.jsonl".to_string(), std::fs::read(&lie).unwrap()));
    let mut names: Vec<_> = std::fs::read_dir(&bundle)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for name in names {
        files.push((
            format!("bundle/{name}"),
            std::fs::read(bundle.join(&name)).unwrap(),
        ));
    }
    files
}

#[test]
fn crit_10_simulate_audit_outputs_are_byte_identical() {
    // Separate processes guarantee each --threads setting configures its own
    // pool; the binary must not let scheduling reach the numbers.
    let root = tempfile::tempdir().unwrap();
    let multi_a = pipeline(&root.path().join("multi_a"), "4");
    let multi_b = pipeline(&root.path().join("multi_b"), "4");
    let single = pipeline(&root.path().join("single"), "1");
    assert_eq!(multi_a.len(), multi_b.len());
    assert_eq!(multi_a.len(), single.len());
    for ((name_a, bytes_a), ((name_b, bytes_b), (name_s, bytes_s))) in
        multi_a.iter().zip(multi_b.iter().zip(single.iter()))
    {
        assert_eq!(name_a, name_b);
        assert_eq!(name_a, name_s);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between identical runs");
        assert_eq!(
            bytes_a, bytes_s,
            "{name_a} differs between 4-thread and 1-thread runs"
        );
    }
    println!(
        "PASS criterion 10: {} output files byte-identical across reruns and 1 vs 4 threads",
        multi_a.len()
    );
}

// ---------------------------------------------------------------------------
// 11. Report fixtures round-trip exactly as formatted
// ---------------------------------------------------------------------------

#[test]
fn crit_11_markdown_emitters_reproduce_the_fixture_rows() {
    use belief_audit::report::*;
    let fixture_dir = repo_path("crates/core/tests/fixtures");
    let rows: Vec<CiTableRow> =
        serde_json::from_str(&std::fs::read_to_string(fixture_dir.join("table1.json")).unwrap())
            .unwrap();
    let md = ci_table_markdown(&rows);
    assert!(md.contains(
        "| Heart--GPT-Min | 0.1454 | [0.1119, 0.1789] | 16.37 | [11.85, 20.90] | 13.05 | [9.16, 17.54] |"
    ));
    let reparsed = parse_ci_table_markdown(&md).unwrap();
    assert_eq!(ci_table_markdown(&reparsed), md);

    let rows: Vec<MonotoneTableRow> =
        serde_json::from_str(&std::fs::read_to_string(fixture_dir.join("table2.json")).unwrap())
            .unwrap();
    let headers: Vec<String> = ["Y/(N+Y)", "Y/(D+Y)", "D/(N+D)"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let md = monotone_table_markdown(&headers, &rows);
    assert!(md.contains("| Heart--DeepSeek | 0.0 | 20.0 | 30.0 |"));
    assert_eq!(
        monotone_table_markdown(&headers, &parse_monotone_table_markdown(&md).unwrap()),
        md
    );

    let rows: Vec<Dot4TableRow> =
        serde_json::from_str(&std::fs::read_to_string(fixture_dir.join("table3.json")).unwrap())
            .unwrap();
    let headers: Vec<String> = ["MSE", "Abs", "Bayes"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let md = dot4_table_markdown(&headers, &rows);
    assert!(md.contains("| Heart--GPT-High | .0591 | .0456 | .0436 | .0682 |"));
    assert_eq!(
        dot4_table_markdown(&headers, &parse_dot4_table_markdown(&md).unwrap()),
        md
    );

    println!(
        "PASS criterion 11: table layouts reproduce and round-trip the published fixture rows"
    );
}

// ---------------------------------------------------------------------------
// 12. Single-binary end-to-end run, offline (stub endpoint only)
// ---------------------------------------------------------------------------

#[test]
fn crit_12_end_to_end_offline_pipeline() {
    use belief_audit::elicit::stub::{completion_body, StubServer};
    let start = Instant::now();
    let server = StubServer::start(Box::new(|body: &str, _| {
        let text = if body.contains("Can you make a decision") {
            "Can decide: Yes\nDecision: Yes"
        } else if body.contains("probability distribution over") {
            "young: 0.30\nold: 0.70"
        } else if body.contains("and is young") {
            "No: 0.80\nYes: 0.20"
        } else if body.contains("and is old") {
            "No: 0.20\nYes: 0.80"
        } else {
            "No: 0.40\nYes: 0.60"
        };
        (200, completion_body(text))
    }));
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("BELIEF_AUDIT_ACCEPT_TOKEN", "local");

    let contexts: Vec<serde_json::Value> = (0..12)
        .map(|i| {
            serde_json::json!({
                "context_id": format!("c{i:02}"),
                "covariates": { "Sex": if i % 2 == 0 { "Male" } else { "Female" } },
                "patient_description": format!("is patient number {i}"),
                "outcome": i % 2,
                "ground_truth": 0.5,
                "auxiliary": {
                    "name": "age group",
                    "cells": ["young", "old"],
                    "conditions": ["is young", "is old"]
                }
            })
        })
        .collect();
    let campaign = serde_json::json!({
        "contexts": contexts,
        "families": ["standard", "decision", "next_state", "conditional"],
        "repetitions": 2,
        "clinical_question": "have the condition",
        "labels": ["No", "Yes"],
        "endpoint": {
            "base_url": server.url(),
            "model": "stub",
            "auth_env": "BELIEF_AUDIT_ACCEPT_TOKEN",
            "body_template": { "model": "{{model}}", "messages": [{ "role": "user", "content": "{{prompt}}" }] },
            "response_path": "choices.0.message.content",
            "timeout_secs": 5,
            "max_retries": 2,
            "headers": { "Authorization": "Bearer {{token}}" }
        },
        "out_records": dir.path().join("records.jsonl"),
        "out_lie": dir.path().join("lie.jsonl"),
        "out_log": dir.path().join("log.jsonl"),
        "out_quarantine": dir.path().join("quarantine.jsonl")
    });
    let cfg_path = dir.path().join("campaign.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&campaign).unwrap()).unwrap();

    let output = Command::new(env!("CARGO_BIN_EXE_belief-audit"))
        .env("BELIEF_AUDIT_ACCEPT_TOKEN", "local")
        .args([
            "elicit",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "3",
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("0 quarantined"), "stdout: {stdout}");

    // audit the elicited records with the battery (small settings)
    let bundle = dir.path().join("bundle");
    run_binary(&[
        "audit",
        "--records",
        dir.path().join("records.jsonl").to_str().unwrap(),
        "--out",
        bundle.to_str().unwrap(),
        "--seed",
        "3",
        "--bootstraps",
        "100",
        "--n-perm",
        "99",
        "--depth",
        "2",
        "--iterations",
        "20",
        "--lie-triples",
        dir.path().join("lie.jsonl").to_str().unwrap(),
        "--tests",
        "monotone,consistency,lie",
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["tests"]["consistency"], "ok");
    assert_eq!(summary["tests"]["lie"], "ok");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "end-to-end took {elapsed:?}");
    println!(
        "PASS criterion 12: elicit (stub endpoint) + audit end to end, {} requests, in {elapsed:?}; suite total is reported by the cargo test run",
        server.request_count()
    );
}
