//! Prompt-consistency metrics: within-prompt dispersion under the reference
//! prompt, RMSE of repetition-averaged beliefs across alternative prompts,
//! and RMSE against ground-truth posteriors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AuditError;
use crate::records::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    /// Mean over contexts of the per-context standard deviation of the
    /// reference prompt's repetitions.
    pub within_prompt_std: f64,
    /// Alternative prompt id -> RMSE against the reference prompt.
    pub rmse_by_prompt: BTreeMap<String, f64>,
    pub rmse_vs_ground_truth: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConsistencyConfig {
    pub reference_prompt: String,
    /// Difference per repetition instead of averaging both sides first.
    pub per_repetition: bool,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            reference_prompt: "std".into(),
            per_repetition: false,
        }
    }
}

type PromptMap = BTreeMap<String, BTreeMap<String, Vec<f64>>>;

fn beliefs_by_context_prompt(d: &Dataset) -> PromptMap {
    let mut canon = d.clone();
    canon.canonicalize();
    let mut map: PromptMap = BTreeMap::new();
    for r in &canon.records {
        map.entry(r.context_id.clone())
            .or_default()
            .entry(r.prompt_id.clone())
            .or_default()
            .push(r.belief);
    }
    map
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Cross-prompt consistency of elicited beliefs.
///
/// Requires at least two reference-prompt repetitions wherever the reference
/// prompt appears, and at least one context shared between each alternative
/// prompt and the reference.
pub fn prompt_consistency(
    d: &Dataset,
    cfg: &ConsistencyConfig,
) -> Result<ConsistencyResult, AuditError> {
    if d.records.is_empty() {
        return Err(AuditError::EmptyDataset);
    }
    let map = beliefs_by_context_prompt(d);
    let reference = &cfg.reference_prompt;

    let mut stds = Vec::new();
    for (ctx, prompts) in &map {
        if let Some(reps) = prompts.get(reference) {
            if reps.len() < 2 {
                return Err(AuditError::NotEnoughRepetitions {
                    prompt: reference.clone(),
                    context: ctx.clone(),
                    found: reps.len(),
                });
            }
            stds.push(sample_std(reps));
        }
    }
    if stds.is_empty() {
        return Err(AuditError::NoSharedContexts(reference.clone()));
    }
    let within_prompt_std = mean(&stds);

    let mut prompt_ids: Vec<String> = map
        .values()
        .flat_map(|p| p.keys().cloned())
        .filter(|p| p != reference)
        .collect();
    prompt_ids.sort();
    prompt_ids.dedup();

    let mut rmse_by_prompt = BTreeMap::new();
    for prompt in prompt_ids {
        let mut sq = Vec::new();
        for prompts in map.values() {
            let (Some(alt), Some(reference_reps)) = (prompts.get(&prompt), prompts.get(reference))
            else {
                continue;
            };
            let ref_mean = mean(reference_reps);
            if cfg.per_repetition {
                for rep in alt {
                    sq.push((rep - ref_mean) * (rep - ref_mean));
                }
            } else {
                let alt_mean = mean(alt);
                sq.push((alt_mean - ref_mean) * (alt_mean - ref_mean));
            }
        }
        if sq.is_empty() {
            return Err(AuditError::NoSharedContexts(prompt.clone()));
        }
        rmse_by_prompt.insert(prompt, mean(&sq).sqrt());
    }

    // Ground-truth RMSE over the reference prompt, when fully annotated.
    let reference_records: Vec<_> = d
        .records
        .iter()
        .filter(|r| &r.prompt_id == reference)
        .cloned()
        .collect();
    let rmse_vs_ground_truth = if reference_records.iter().all(|r| r.ground_truth.is_some()) {
        let subset = Dataset {
            schema: d.schema.clone(),
            records: reference_records,
        };
        Some(rmse_vs_ground_truth(&subset)?)
    } else {
        None
    };

    Ok(ConsistencyResult {
        within_prompt_std,
        rmse_by_prompt,
        rmse_vs_ground_truth,
    })
}

/// RMSE between repetition-averaged beliefs and the ground-truth posterior,
/// over contexts. Every record must carry `ground_truth`, constant within its
/// context.
pub fn rmse_vs_ground_truth(d: &Dataset) -> Result<f64, AuditError> {
    if d.records.is_empty() {
        return Err(AuditError::EmptyDataset);
    }
    let mut canon = d.clone();
    canon.canonicalize();
    let mut by_context: BTreeMap<&str, (Vec<f64>, f64)> = BTreeMap::new();
    for r in &canon.records {
        let g = r
            .ground_truth
            .ok_or_else(|| AuditError::MissingGroundTruth(r.context_id.clone()))?;
        let entry = by_context
            .entry(&r.context_id)
            .or_insert_with(|| (Vec::new(), g));
        if (entry.1 - g).abs() > 1e-12 {
            return Err(AuditError::InconsistentGroundTruth(r.context_id.clone()));
        }
        entry.0.push(r.belief);
    }
    let sq: Vec<f64> = by_context
        .values()
        .map(|(beliefs, g)| {
            let m = mean(beliefs);
            (m - g) * (m - g)
        })
        .collect();
    Ok(mean(&sq).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{ActionLabel, DecisionRecord, Schema};

    fn record(
        ctx: &str,
        prompt: &str,
        rep: u32,
        belief: f64,
        ground: Option<f64>,
    ) -> DecisionRecord {
        DecisionRecord {
            context_id: ctx.into(),
            covariates: BTreeMap::new(),
            belief,
            action: ActionLabel::Yes,
            outcome: 1,
            prompt_id: prompt.into(),
            repetition: rep,
            ground_truth: ground,
            forced_decision: None,
        }
    }

    fn dataset(records: Vec<DecisionRecord>) -> Dataset {
        Dataset {
            schema: Schema { covariates: vec![] },
            records,
        }
    }

    #[test]
    fn identical_repetitions_give_zero_everywhere() {
        let mut records = Vec::new();
        for ctx in ["c1", "c2"] {
            for rep in 0..3 {
                records.push(record(ctx, "std", rep, 0.4, None));
                records.push(record(ctx, "mse", rep, 0.4, None));
            }
        }
        let res = prompt_consistency(&dataset(records), &ConsistencyConfig::default()).unwrap();
        assert!(res.within_prompt_std.abs() < 1e-12);
        assert!(res.rmse_by_prompt["mse"].abs() < 1e-12);
    }

    #[test]
    fn rmse_matches_hand_computation() {
        // means under pi1 = (0.4, 0.6), under pi0 = (0.2, 0.4) -> RMSE 0.2
        let mut records = Vec::new();
        for (ctx, p0, p1) in [("c1", 0.2, 0.4), ("c2", 0.4, 0.6)] {
            for rep in 0..2 {
                records.push(record(ctx, "std", rep, p0, None));
                records.push(record(ctx, "pi1", rep, p1, None));
            }
        }
        let res = prompt_consistency(&dataset(records), &ConsistencyConfig::default()).unwrap();
        assert!((res.rmse_by_prompt["pi1"] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn single_repetition_reference_errors() {
        let records = vec![record("c1", "std", 0, 0.5, None)];
        let err = prompt_consistency(&dataset(records), &ConsistencyConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            AuditError::NotEnoughRepetitions { found: 1, .. }
        ));
    }

    #[test]
    fn disjoint_prompts_error() {
        let records = vec![
            record("c1", "std", 0, 0.5, None),
            record("c1", "std", 1, 0.5, None),
            record("c2", "alt", 0, 0.3, None),
        ];
        let err = prompt_consistency(&dataset(records), &ConsistencyConfig::default()).unwrap_err();
        assert!(matches!(err, AuditError::NoSharedContexts(_)));
    }

    #[test]
    fn ground_truth_rmse_identities() {
        // truthful reporter -> 0
        let records = vec![
            record("c1", "std", 0, 0.3, Some(0.3)),
            record("c2", "std", 0, 0.8, Some(0.8)),
        ];
        assert_eq!(rmse_vs_ground_truth(&dataset(records)).unwrap(), 0.0);

        // constant 0.5 against p* in {0,1} half each -> 0.5
        let records = vec![
            record("c1", "std", 0, 0.5, Some(0.0)),
            record("c2", "std", 0, 0.5, Some(1.0)),
        ];
        assert!((rmse_vs_ground_truth(&dataset(records)).unwrap() - 0.5).abs() < 1e-12);

        // missing ground truth errors
        let records = vec![record("c1", "std", 0, 0.5, None)];
        assert!(matches!(
            rmse_vs_ground_truth(&dataset(records)),
            Err(AuditError::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn per_repetition_flag_changes_the_average() {
        let records = vec![
            record("c1", "std", 0, 0.2, None),
            record("c1", "std", 1, 0.4, None),
            record("c1", "alt", 0, 0.1, None),
            record("c1", "alt", 1, 0.7, None),
        ];
        let averaged =
            prompt_consistency(&dataset(records.clone()), &ConsistencyConfig::default()).unwrap();
        // mean alt 0.4 vs mean std 0.3 -> rmse 0.1
        assert!((averaged.rmse_by_prompt["alt"] - 0.1).abs() < 1e-12);

        let per_rep = prompt_consistency(
            &dataset(records),
            &ConsistencyConfig {
                per_repetition: true,
                ..Default::default()
            },
        )
        .unwrap();
        // sqrt(((0.1-0.3)^2 + (0.7-0.3)^2)/2) = sqrt(0.1)
        assert!((per_rep.rmse_by_prompt["alt"] - 0.1f64.sqrt()).abs() < 1e-12);
    }
}
