use std::path::{Path, PathBuf};

use anyhow::Context;
use belief_audit::agents::{run_episode, AgentSpec};
use belief_audit::audits::{
    ci_test, monotone_pairwise_test, predictive_sufficiency_test, CiTestConfig, MonotoneConfig,
    PredictiveConfig,
};
use belief_audit::bayesnet::BayesNet;
use belief_audit::estimators::GbdtConfig;
use belief_audit::records::ActionLabel;
use belief_audit::report::to_csv;
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Args)]
pub struct PowerStudyArgs {
    /// Study grid configuration (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed; cell runs use master + seed index
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
struct StudyConfig {
    #[serde(default)]
    net: Option<serde_json::Value>,
    #[serde(default)]
    net_file: Option<PathBuf>,
    cells: Vec<CellSpec>,
    n_contexts: usize,
    repetitions: u32,
    n_seeds: u64,
    #[serde(default = "default_alpha")]
    alpha: f64,
    tests: Vec<String>,
    #[serde(default)]
    ci: CiParams,
    #[serde(default)]
    predictive: PredictiveParams,
    #[serde(default)]
    monotone: MonotoneParams,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Deserialize)]
struct CellSpec {
    name: String,
    #[serde(default)]
    agent: Option<AgentSpec>,
    #[serde(default)]
    agent_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct CiParams {
    k: usize,
    bootstraps: usize,
    n_perm: usize,
}

impl Default for CiParams {
    fn default() -> Self {
        CiParams {
            k: 3,
            bootstraps: 200,
            n_perm: 99,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct PredictiveParams {
    folds: usize,
    depth: usize,
    iterations: usize,
    bootstraps: usize,
}

impl Default for PredictiveParams {
    fn default() -> Self {
        PredictiveParams {
            folds: 5,
            depth: 3,
            iterations: 60,
            bootstraps: 200,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct MonotoneParams {
    bins: usize,
    pair: (String, String),
}

impl Default for MonotoneParams {
    fn default() -> Self {
        MonotoneParams {
            bins: 5,
            pair: ("Yes".into(), "No".into()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct SeedOutcome {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    perm_pvalue: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cmi_ci_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pct_improvement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    improvement_ci: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    violation_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    any_significant_flag: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct CellReport {
    name: String,
    ci_rejection_rate: Option<f64>,
    ci_lower_positive_rate: Option<f64>,
    mean_cmi: Option<f64>,
    mean_improvement: Option<f64>,
    improvement_ci_excludes_zero_rate: Option<f64>,
    improvement_ci_contains_zero_rate: Option<f64>,
    mean_violation_rate: Option<f64>,
    zero_violation_rate: Option<f64>,
    monotone_flag_rate: Option<f64>,
    per_seed: Vec<SeedOutcome>,
}

#[derive(Debug, Serialize)]
struct StudyReport {
    alpha: f64,
    n_contexts: usize,
    repetitions: u32,
    n_seeds: u64,
    cells: Vec<CellReport>,
}

fn rate<F: Fn(&SeedOutcome) -> Option<bool>>(outcomes: &[SeedOutcome], f: F) -> Option<f64> {
    let hits: Vec<bool> = outcomes.iter().filter_map(&f).collect();
    if hits.is_empty() {
        return None;
    }
    Some(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

fn mean_of<F: Fn(&SeedOutcome) -> Option<f64>>(outcomes: &[SeedOutcome], f: F) -> Option<f64> {
    let vals: Vec<f64> = outcomes.iter().filter_map(&f).collect();
    if vals.is_empty() {
        return None;
    }
    Some(vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn run(args: PowerStudyArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let cfg: StudyConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.config.display()))?;

    let net = match (&cfg.net, &cfg.net_file) {
        (Some(value), _) => {
            if let Some(recipe) = value.get("generator") {
                let recipe: belief_audit::bayesnet::generate::LayeredNetConfig =
                    serde_json::from_value(recipe.clone())?;
                belief_audit::bayesnet::generate::layered_net(&recipe)?
            } else {
                BayesNet::from_json(value)?
            }
        }
        (None, Some(path)) => {
            let base = args.config.parent().unwrap_or(Path::new("."));
            let resolved = if path.is_absolute() {
                path.clone()
            } else {
                base.join(path)
            };
            BayesNet::load(&resolved)?
        }
        (None, None) => anyhow::bail!("study config needs 'net' or 'net_file'"),
    };

    let base = args.config.parent().unwrap_or(Path::new("."));
    let agents: Vec<AgentSpec> = cfg
        .cells
        .iter()
        .map(|cell| match (&cell.agent, &cell.agent_file) {
            (Some(a), _) => {
                a.validate()?;
                Ok(a.clone())
            }
            (None, Some(path)) => {
                let resolved = if path.is_absolute() {
                    path.clone()
                } else {
                    base.join(path)
                };
                Ok(AgentSpec::load(&resolved)?)
            }
            (None, None) => Err(anyhow::anyhow!(
                "cell '{}' needs 'agent' or 'agent_file'",
                cell.name
            )),
        })
        .collect::<anyhow::Result<_>>()?;

    let monotone_pair = (
        ActionLabel::parse(&cfg.monotone.pair.0)
            .ok_or_else(|| anyhow::anyhow!("bad action '{}'", cfg.monotone.pair.0))?,
        ActionLabel::parse(&cfg.monotone.pair.1)
            .ok_or_else(|| anyhow::anyhow!("bad action '{}'", cfg.monotone.pair.1))?,
    );

    let units: Vec<(usize, u64)> = (0..cfg.cells.len())
        .flat_map(|c| (0..cfg.n_seeds).map(move |s| (c, s)))
        .collect();
    let outcomes: Vec<SeedOutcome> = units
        .par_iter()
        .map(|&(cell_idx, seed_idx)| {
            let seed = args.seed + seed_idx;
            let mut outcome = SeedOutcome {
                seed,
                cmi: None,
                perm_pvalue: None,
                cmi_ci_lower: None,
                pct_improvement: None,
                improvement_ci: None,
                violation_rate: None,
                any_significant_flag: None,
                error: None,
            };
            let dataset = match run_episode(
                &net,
                &agents[cell_idx],
                cfg.n_contexts,
                cfg.repetitions,
                seed,
            ) {
                Ok(d) => d,
                Err(e) => {
                    outcome.error = Some(e.to_string());
                    return outcome;
                }
            };
            for test in &cfg.tests {
                let verdict: Result<(), String> = match test.as_str() {
                    "ci" => ci_test(
                        &dataset,
                        &CiTestConfig {
                            k: cfg.ci.k,
                            bootstraps: cfg.ci.bootstraps,
                            n_perm: cfg.ci.n_perm,
                            ..Default::default()
                        },
                        seed,
                    )
                    .map(|res| {
                        outcome.cmi = Some(res.cmi.value);
                        outcome.perm_pvalue = Some(res.perm_pvalue);
                        outcome.cmi_ci_lower = Some(res.ci.lower);
                    })
                    .map_err(|e| e.to_string()),
                    "predictive" => predictive_sufficiency_test(
                        &dataset,
                        &PredictiveConfig {
                            folds: cfg.predictive.folds,
                            gbdt: GbdtConfig {
                                depth: cfg.predictive.depth,
                                iterations: cfg.predictive.iterations,
                                ..Default::default()
                            },
                            bootstraps: cfg.predictive.bootstraps,
                            ..Default::default()
                        },
                        seed,
                    )
                    .map(|res| {
                        outcome.pct_improvement = Some(res.pct_improvement);
                        outcome.improvement_ci = Some((res.ci.lower, res.ci.upper));
                    })
                    .map_err(|e| e.to_string()),
                    "monotone" => monotone_pairwise_test(
                        &dataset,
                        &MonotoneConfig {
                            pair: monotone_pair,
                            bins: cfg.monotone.bins,
                            alpha: cfg.alpha,
                            use_binomial: false,
                        },
                        seed,
                    )
                    .map(|res| {
                        outcome.violation_rate = Some(res.significant_violation_rate);
                        outcome.any_significant_flag =
                            Some(res.flagged.iter().any(|f| f.p_value < cfg.alpha));
                    })
                    .map_err(|e| e.to_string()),
                    other => Err(format!("unknown test '{other}'")),
                };
                if let Err(e) = verdict {
                    outcome.error = Some(e);
                }
            }
            outcome
        })
        .collect();

    let alpha = cfg.alpha;
    let mut cells = Vec::new();
    for (cell_idx, cell) in cfg.cells.iter().enumerate() {
        let per_seed: Vec<SeedOutcome> = outcomes
            [cell_idx * cfg.n_seeds as usize..(cell_idx + 1) * cfg.n_seeds as usize]
            .to_vec();
        cells.push(CellReport {
            name: cell.name.clone(),
            ci_rejection_rate: rate(&per_seed, |o| o.perm_pvalue.map(|p| p < alpha)),
            ci_lower_positive_rate: rate(&per_seed, |o| o.cmi_ci_lower.map(|l| l > 0.0)),
            mean_cmi: mean_of(&per_seed, |o| o.cmi),
            mean_improvement: mean_of(&per_seed, |o| o.pct_improvement),
            improvement_ci_excludes_zero_rate: rate(&per_seed, |o| {
                o.improvement_ci.map(|(lo, _)| lo > 0.0)
            }),
            improvement_ci_contains_zero_rate: rate(&per_seed, |o| {
                o.improvement_ci.map(|(lo, hi)| lo <= 0.0 && hi >= 0.0)
            }),
            mean_violation_rate: mean_of(&per_seed, |o| o.violation_rate),
            zero_violation_rate: rate(&per_seed, |o| o.violation_rate.map(|v| v == 0.0)),
            monotone_flag_rate: rate(&per_seed, |o| o.any_significant_flag),
            per_seed,
        });
    }
    let report = StudyReport {
        alpha,
        n_contexts: cfg.n_contexts,
        repetitions: cfg.repetitions,
        n_seeds: cfg.n_seeds,
        cells,
    };

    std::fs::create_dir_all(&args.out)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(args.out.join("study.json"), text)?;

    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                fmt(c.ci_rejection_rate),
                fmt(c.ci_lower_positive_rate),
                fmt(c.mean_improvement),
                fmt(c.improvement_ci_excludes_zero_rate),
                fmt(c.mean_violation_rate),
                fmt(c.monotone_flag_rate),
            ]
        })
        .collect();
    let csv = to_csv(
        &[
            "cell",
            "ci_rejection_rate",
            "ci_lower_positive_rate",
            "mean_improvement",
            "improvement_ci_excludes_zero_rate",
            "mean_violation_rate",
            "monotone_flag_rate",
        ],
        &rows,
    );
    std::fs::write(args.out.join("study.csv"), csv)?;

    let mut md = String::from(
        "| Cell | CI rej. | CI lower>0 | Mean % impr | Impr CI>0 | Mean viol. rate | Monotone flag |\n\
         | --- | --- | --- | --- | --- | --- | --- |\n",
    );
    for row in &rows {
        md.push_str(&format!("| {} |\n", row.join(" | ")));
    }
    std::fs::write(args.out.join("study.md"), md)?;

    println!(
        "power study complete: {} cells x {} seeds",
        report.cells.len(),
        report.n_seeds
    );
    for cell in &report.cells {
        println!(
            "  {}: ci_rej={} lower>0={} mean_impr={} viol_rate={}",
            cell.name,
            fmt(cell.ci_rejection_rate),
            fmt(cell.ci_lower_positive_rate),
            fmt(cell.mean_improvement),
            fmt(cell.mean_violation_rate),
        );
    }
    Ok(())
}
