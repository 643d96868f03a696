//! Property tests for the structural invariants: serialization round-trips,
//! grouping partitions, monotone fits, and valid p-values.

use std::collections::BTreeMap;

use belief_audit::estimators::{fisher_exact_one_sided, isotonic_fit, ContingencyTable2x2};
use belief_audit::records::{
    group_by_context, load_records, ActionLabel, Dataset, DecisionRecord, RecordFormat, Schema,
};
use proptest::prelude::*;

fn arb_action() -> impl Strategy<Value = ActionLabel> {
    prop_oneof![
        Just(ActionLabel::Yes),
        Just(ActionLabel::No),
        Just(ActionLabel::Defer),
    ]
}

fn arb_record() -> impl Strategy<Value = DecisionRecord> {
    (
        0u32..20,
        0.0f64..=1.0,
        arb_action(),
        0u8..=1,
        0u32..5,
        proptest::option::of(0.0f64..=1.0),
        prop_oneof![Just("Male"), Just("Female")],
    )
        .prop_map(
            |(ctx, belief, action, outcome, repetition, ground_truth, sex)| DecisionRecord {
                context_id: format!("ctx{ctx:02}"),
                covariates: BTreeMap::from([("Sex".to_string(), sex.to_string())]),
                belief,
                action,
                outcome,
                prompt_id: "std".into(),
                repetition,
                ground_truth,
                forced_decision: None,
            },
        )
}

fn schema() -> Schema {
    Schema::new(vec![("Sex", vec!["Male", "Female"])])
}

fn dedup_keys(mut records: Vec<DecisionRecord>) -> Vec<DecisionRecord> {
    let mut seen = std::collections::BTreeSet::new();
    records.retain(|r| seen.insert(r.key()));
    records
}

proptest! {
    #[test]
    fn jsonl_round_trip_is_identity_after_canonical_sort(records in proptest::collection::vec(arb_record(), 1..40)) {
        let mut d = Dataset { schema: schema(), records: dedup_keys(records) };
        prop_assume!(!d.records.is_empty());
        d.canonicalize();
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), &buf).unwrap();
        let back = load_records(tmp.path(), RecordFormat::Jsonl, &schema()).unwrap();
        prop_assert_eq!(d, back);
    }

    #[test]
    fn grouping_is_a_partition(records in proptest::collection::vec(arb_record(), 0..60)) {
        let d = Dataset { schema: schema(), records: dedup_keys(records) };
        let groups = group_by_context(&d);
        let total: usize = groups.iter().map(|(_, g)| g.len()).sum();
        prop_assert_eq!(total, d.records.len());
        // sorted group keys, and every record sits in the right group
        let keys: Vec<&String> = groups.iter().map(|(k, _)| k).collect();
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        for (key, members) in &groups {
            prop_assert!(members.iter().all(|r| &r.context_id == key));
        }
    }

    #[test]
    fn pava_is_nondecreasing_and_no_worse_than_constant(ys in proptest::collection::vec(0.0f64..=1.0, 1..30)) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        let fit = isotonic_fit(&xs, &ys).unwrap();
        prop_assert!(fit.levels.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        // the constant-at-mean function is monotone, so PAVA can't lose to it
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let constant_sse: f64 = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
        prop_assert!(fit.sse(&xs, &ys) <= constant_sse + 1e-12);
    }

    #[test]
    fn fisher_pvalues_are_probabilities(a in 0u64..40, b in 0u64..40, c in 0u64..40, d in 0u64..40) {
        prop_assume!(a + b + c + d > 0);
        let p = fisher_exact_one_sided(&ContingencyTable2x2 { a, b, c, d }).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }
}
