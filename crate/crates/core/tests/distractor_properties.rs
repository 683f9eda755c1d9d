mod common;

use allocbench::distractor::{
    distance_bins, euclidean_distance, generate, relative_deviation, threshold_bins, DistractorMethod, DistractorSet,
    DistractorSpec, Interval,
};
use allocbench::metrics::{self, ObjectiveKind, ObjectiveSpec};
use allocbench::optimizer::{feasible, solve, ConstraintSet, SolveOptions, SolveReport};
use allocbench::Error;
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = DistractorSpec> {
    prop_oneof![
        prop::sample::select(distance_bins()).prop_map(DistractorSpec::distance),
        prop::sample::select(threshold_bins()).prop_map(DistractorSpec::threshold),
        Just(DistractorSpec {
            pool_size: 1000,
            ..DistractorSpec::quantile()
        }),
        Just(DistractorSpec::dual(Interval::closed(0.25, 1.0), Interval::closed(0.0, 0.75))),
    ]
}

fn constraint_strategy() -> impl Strategy<Value = ConstraintSet> {
    prop_oneof![
        Just(ConstraintSet::default()),
        Just(ConstraintSet::with_lower(0.1)),
        Just(ConstraintSet::with_upper(0.7)),
        Just(ConstraintSet::with_asset_count(2)),
    ]
}

fn check_set(set: &DistractorSet, opt: &SolveReport, obj: &ObjectiveSpec, c: &ConstraintSet, r: &allocbench::ReturnsMatrix, spec: &DistractorSpec) -> Result<(), TestCaseError> {
    let f_opt = opt.objective_value;
    let ds = &set.distractors;
    for d in ds {
        prop_assert!(feasible(&d.portfolio, c, r));
        let v = metrics::objective_value(obj, r, &d.portfolio).unwrap();
        prop_assert_eq!(v, d.objective_value);
        prop_assert!(v - f_opt >= spec.margin * f_opt.abs().max(1e-8) * (1.0 - 1e-12));
        let dist = euclidean_distance(&d.portfolio, &opt.portfolio).unwrap();
        prop_assert!((dist - d.distance).abs() <= 1e-12);
        prop_assert!((relative_deviation(v, f_opt) - d.deviation).abs() <= 1e-12);
        if let Some(t) = spec.theta {
            prop_assert!(t.contains(d.distance), "distance {} outside {t}", d.distance);
        }
        if let Some(t) = spec.delta {
            prop_assert!(t.contains(d.deviation), "deviation {} outside {t}", d.deviation);
        }
    }
    for i in 0..3 {
        for j in i + 1..3 {
            let dij = euclidean_distance(&ds[i].portfolio, &ds[j].portfolio).unwrap();
            prop_assert!(dij >= spec.min_separation);
            if spec.method == DistractorMethod::Dual {
                prop_assert!((spec.pair_min..=spec.pair_max).contains(&dij), "pair distance {dij}");
            }
        }
    }
    if spec.method == DistractorMethod::Quantile {
        prop_assert!(ds[0].objective_value <= ds[1].objective_value && ds[1].objective_value <= ds[2].objective_value);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distractors_obey_their_filters(
        kind in prop::sample::select(ObjectiveKind::ALL.to_vec()),
        c in constraint_strategy(),
        spec in spec_strategy(),
        instance in 0u64..10_000,
        seed in any::<u64>(),
    ) {
        let r = common::random_market(3, 150, instance);
        let obj = ObjectiveSpec::new(kind);
        let opt = match solve(&obj, &c, &r, &SolveOptions::default()) {
            Ok(s) => s,
            Err(Error::DegenerateObjective(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let spec = DistractorSpec { seed, ..spec };
        match generate(&opt, &obj, &c, &r, &spec) {
            Ok(set) => {
                check_set(&set, &opt, &obj, &c, &r, &spec)?;
                let again = generate(&opt, &obj, &c, &r, &spec).unwrap();
                prop_assert_eq!(again, set);
            }
            // Narrow bins can be unreachable for a given optimum.
            Err(Error::GenerationExhausted(_)) => prop_assert!(spec.method != DistractorMethod::Quantile),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn distance_bins_partition(x in 0.0f64..1.0) {
        let hits = distance_bins().iter().filter(|b| b.contains(x)).count();
        prop_assert_eq!(hits, 1);
    }
}

#[test]
fn threshold_bin_maps_to_variance_band() {
    // Variances 0.2 and 0.05: the optimum (0.2, 0.8) has variance 0.04.
    let r = common::diagonal_market([0.0, 0.0], [0.2, 0.05]);
    let obj = ObjectiveSpec::new(ObjectiveKind::MinVariance);
    let c = ConstraintSet::default();
    let opt = solve(&obj, &c, &r, &SolveOptions::default()).unwrap();
    assert!((opt.objective_value - 0.04).abs() < 1e-12);
    let spec = DistractorSpec {
        seed: 5,
        ..DistractorSpec::threshold(Interval::left_open(0.25, 0.5))
    };
    let set = generate(&opt, &obj, &c, &r, &spec).unwrap();
    for d in &set.distractors {
        assert!(d.objective_value > 0.05 && d.objective_value <= 0.06 + 1e-12, "{}", d.objective_value);
    }
}

#[test]
fn tight_distance_bin_stays_close() {
    let r = common::random_market(3, 200, 21);
    let obj = ObjectiveSpec::new(ObjectiveKind::MinVariance);
    let c = ConstraintSet::default();
    let opt = solve(&obj, &c, &r, &SolveOptions::default()).unwrap();
    let set = generate(&opt, &obj, &c, &r, &DistractorSpec::distance(Interval::closed(0.0, 0.25))).unwrap();
    for d in &set.distractors {
        assert!(d.distance > 0.0 && d.distance <= 0.25);
    }
}

#[test]
fn a_false_optimum_is_caught() {
    let r = common::random_market(3, 200, 22);
    let obj = ObjectiveSpec::new(ObjectiveKind::MinVariance);
    let c = ConstraintSet::default();
    let mut opt = solve(&obj, &c, &r, &SolveOptions::default()).unwrap();
    let worst = (0..3)
        .map(|i| {
            let mut e = vec![0.0; 3];
            e[i] = 1.0;
            metrics::objective_value(&obj, &r, &e).unwrap()
        })
        .fold(0.0, f64::max);
    opt.objective_value = worst;
    let e = generate(&opt, &obj, &c, &r, &DistractorSpec::quantile()).unwrap_err();
    assert!(matches!(e, Error::OptimumViolated { .. }), "{e}");
}

#[test]
fn unreachable_bin_reports_filter_counts() {
    let r = common::random_market(3, 100, 23);
    let obj = ObjectiveSpec::new(ObjectiveKind::MaxReturn);
    let c = ConstraintSet::default();
    let opt = solve(&obj, &c, &r, &SolveOptions::default()).unwrap();
    // Only points almost a full vertex-to-vertex apart qualify.
    let spec = DistractorSpec {
        max_attempts: 2000,
        ..DistractorSpec::distance(Interval::left_open(1.414, 1.4142))
    };
    match generate(&opt, &obj, &c, &r, &spec).unwrap_err() {
        Error::GenerationExhausted(stats) => {
            assert_eq!(stats.drawn, 2000);
            assert!(stats.outside_distance > 0);
            assert!(stats.accepted < 3);
        }
        e => panic!("{e}"),
    }
}
