mod common;

use common::oracle;
use pipeopt::pareto::{ceiling_accuracy, ceilings, delta, deltas, pareto_indices, pareto_set, EvalPoint};
use proptest::prelude::*;

/// Point sets with frequent cost and accuracy ties.
fn point_set(max: usize) -> impl Strategy<Value = Vec<EvalPoint>> {
    let accuracy = prop_oneof![(0u32..=20).prop_map(|k| k as f64 / 20.0), 0.0f64..=1.0];
    let cost = prop_oneof![0u64..30, 0u64..5_000_000];
    prop::collection::vec((cost, accuracy), 0..=max).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (c, a))| EvalPoint::from_micros(format!("p{i}"), c, a))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn frontier_and_deltas_match_brute_force(points in point_set(200)) {
        prop_assert_eq!(pareto_indices(&points), oracle::pareto(&points));
        let mut expect: Vec<EvalPoint> = oracle::pareto(&points).into_iter().map(|i| points[i].clone()).collect();
        let got = pareto_set(&points);
        expect.sort_by(|a, b| a.pipeline_key.cmp(&b.pipeline_key));
        let mut sorted = got.clone();
        sorted.sort_by(|a, b| a.pipeline_key.cmp(&b.pipeline_key));
        prop_assert_eq!(sorted, expect);
        for w in got.windows(2) {
            prop_assert!(w[0].cost_micros <= w[1].cost_micros);
        }
        let c = ceilings(&points);
        let d = deltas(&points);
        for (i, p) in points.iter().enumerate() {
            let want = oracle::ceiling(&points, i);
            prop_assert_eq!(c[i], want);
            prop_assert_eq!(ceiling_accuracy(&points, p).unwrap(), want);
            prop_assert_eq!(d[i], p.accuracy - want);
            prop_assert_eq!(delta(&points, p).unwrap(), p.accuracy - want);
        }
    }

    #[test]
    fn ceiling_equals_frontier_of_the_rest(points in point_set(30)) {
        for i in 0..points.len() {
            prop_assert_eq!(oracle::ceiling(&points, i), oracle::ceiling_via_frontier(&points, i));
        }
    }

    #[test]
    fn only_frontier_points_have_positive_delta(points in point_set(60)) {
        let front = pareto_indices(&points);
        for (i, d) in deltas(&points).into_iter().enumerate() {
            if d > 0.0 {
                prop_assert!(front.contains(&i));
            }
        }
    }
}

#[test]
fn unknown_point_is_an_error() {
    let points = vec![EvalPoint::from_micros("a", 1, 0.5)];
    let stranger = EvalPoint::from_micros("b", 1, 0.5);
    assert!(delta(&points, &stranger).is_err());
}
