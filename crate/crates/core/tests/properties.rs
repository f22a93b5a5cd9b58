//! Property tests for the invariants every module promises.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use cardcorr::baselines::isotonic_fit;
use cardcorr::dataset::{samples_for, split_by_execution, FeatureSchema, SplitFractions};
use cardcorr::eval::qerror;
use cardcorr::policy::{apply_policy, safe_inject_pass, PolicyConfig, ProjectionRule};
use cardcorr::synthgen::{generate, GenSpec};
use cardcorr::targets::{invert, make_target, TargetMode};
use cardcorr::trace::{GroupMapping, TraceCorpus};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_corpus() -> &'static TraceCorpus {
    static C: std::sync::OnceLock<TraceCorpus> = std::sync::OnceLock::new();
    C.get_or_init(|| {
        generate(&GenSpec {
            n_executions: 40,
            seed: 17,
            ..GenSpec::default()
        })
        .unwrap()
    })
}

fn rows_arb() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), 0.0..1.0, 0.0..1e9f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn qerror_is_symmetric_and_at_least_one(e in rows_arb(), a in rows_arb()) {
        let q = qerror(e, a);
        prop_assert!(q >= 1.0);
        prop_assert_eq!(q, qerror(a, e));
        prop_assert_eq!(q == 1.0, e.max(1.0) == a.max(1.0));
    }

    #[test]
    fn targets_invert_exactly(est in rows_arb(), act in prop_oneof![Just(0u64), 0u64..1_000_000_000_000]) {
        for mode in [TargetMode::Correction, TargetMode::Direct] {
            let back = invert(make_target(est, act, mode), est, mode);
            prop_assert!((back - act as f64).abs() <= 1e-9 * (1.0 + act as f64), "{:?} {} {} {}", mode, est, act, back);
        }
    }

    #[test]
    fn isotonic_fit_is_non_decreasing(points in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 1..40)) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        let f = isotonic_fit(&xs, &ys).unwrap();
        prop_assert!(f.levels.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(f.breakpoints.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn splits_partition_labeled_executions(seed in any::<u64>(), train in 0.3..0.8f64, stratify in any::<bool>()) {
        let rest = (1.0 - train) / 2.0;
        let fr = SplitFractions { train, validation: rest, test: 1.0 - train - rest };
        let c = small_corpus();
        let s = split_by_execution(c, fr, seed, stratify).unwrap();
        prop_assert!(s.is_disjoint());
        let all: BTreeSet<String> = c.traces.iter().map(|t| t.execution_id.clone()).collect();
        let union: BTreeSet<String> = s.train.iter().chain(&s.validation).chain(&s.test).cloned().collect();
        prop_assert_eq!(union, all);
        prop_assert_eq!(&s, &split_by_execution(c, fr, seed, stratify).unwrap());
    }

    #[test]
    fn schema_ignores_non_training_rows(seed in any::<u64>(), noise in any::<u64>()) {
        let groups = GroupMapping::default();
        let c = small_corpus();
        let split = split_by_execution(c, SplitFractions::default(), seed, false).unwrap();
        let fit = |corpus: &TraceCorpus| {
            let train = samples_for(corpus, &split.train, &groups);
            let y: Vec<f64> = train.iter().map(|s| make_target(s.est_rows, s.act(), TargetMode::Correction)).collect();
            FeatureSchema::fit(&train, &y, 10).unwrap()
        };
        let mut mutated = c.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(noise);
        for t in mutated.traces.iter_mut().filter(|t| !split.train.contains(&t.execution_id)) {
            fn scramble(n: &mut cardcorr::trace::PlanNode, rng: &mut ChaCha8Rng) {
                n.est_rows = rng.random_range(0.0..1e9);
                n.act_rows = Some(rng.random_range(0..1_000_000_000));
                n.children.iter_mut().for_each(|c| scramble(c, rng));
            }
            scramble(&mut t.root, &mut rng);
        }
        prop_assert_eq!(fit(c), fit(&mutated));
    }

    #[test]
    fn safe_inject_enforces_rules_and_is_idempotent(seed in any::<u64>(), spread in 0.0..12.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace = common::random_trace(&mut rng, 0);
        let preds: BTreeMap<String, f64> = trace
            .iter_nodes()
            .iter()
            .map(|v| (v.node.node_id.clone(), rng.random_range(-spread..=spread)))
            .collect();
        let cfg = PolicyConfig { safe_inject: true, ..PolicyConfig::default() };
        let out = apply_policy(&trace, &preds, &cfg, None).unwrap();
        prop_assert!(common::check_semantics(&trace.root, &out.corrected_rows).is_ok(),
            "{:?}", common::check_semantics(&trace.root, &out.corrected_rows));
        let mut again = out.corrected_rows.clone();
        prop_assert!(safe_inject_pass(&trace, &mut again, ProjectionRule::Equal).is_empty());
        prop_assert_eq!(again, out.corrected_rows);
    }

    #[test]
    fn corpus_json_round_trips(seed in 0u64..1000) {
        let c = generate(&GenSpec { n_executions: 3, seed, ..GenSpec::default() }).unwrap();
        let bytes = c.to_canonical_json();
        let back = TraceCorpus::from_json_slice(&bytes).unwrap();
        prop_assert_eq!(back.to_canonical_json(), bytes);
    }
}
