use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aspo_core::acquisition::{expected_improvement, AcquisitionContext, CoolingSchedule};
use aspo_core::assets::Assets;
use aspo_core::checkpoint::{
    weighted_distance, CheckpointRecord, CheckpointStore, DistanceWeights,
};
use aspo_core::constraints::{ConstraintNode, ConstraintTree, Divisibility};
use aspo_core::driver::{run, Method, Problem, RunConfig};
use aspo_core::eval::{estimated_execution_time_ms, EvaluationResult};
use aspo_core::gp::{GpModel, KernelParams, Snapping};
use aspo_core::space::{Configuration, EncodedPoint, ParameterDef, ParameterSpace};
use aspo_core::warm_start::{generate_oa, warm_start_configs};

fn small_space() -> Arc<ParameterSpace> {
    Arc::new(
        ParameterSpace::new(
            "small",
            vec![
                ParameterDef::ordinal("a", vec![1, 2, 4, 8], 2).unwrap(),
                ParameterDef::categorical("k", vec!["x", "y", "z"], "x").unwrap(),
                ParameterDef::ordinal("b", vec![3, 6, 9], 3).unwrap(),
                ParameterDef::categorical("flag", vec!["False", "True"], "False").unwrap(),
            ],
        )
        .unwrap(),
    )
}

fn boom() -> aspo_core::assets::ProcessorAssets {
    Assets::bundled()
        .unwrap()
        .processor("boom")
        .unwrap()
        .clone()
}

fn relaxed(space: &ParameterSpace, seed: u64) -> Vec<f64> {
    space.random_relaxed(&mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn decode_encode_is_identity_on_small_space() {
    let space = small_space();
    for i in 0..space.size() {
        let c = space.config_at(i);
        assert_eq!(space.decode(&space.encode(&c).unwrap()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn snap_is_idempotent_and_decodes(seed in any::<u64>()) {
        let space = boom().space;
        let p = EncodedPoint::new(relaxed(&space, seed)).unwrap();
        let s = space.snap(&p).unwrap();
        prop_assert_eq!(space.snap(&s).unwrap(), s.clone());
        let c = space.decode(&p).unwrap();
        prop_assert!(space.validate(&c).is_ok());
        prop_assert_eq!(space.encode(&c).unwrap(), s);
    }

    #[test]
    fn divisibility_is_periodic(a in 1i64..512, b in 1i64..64) {
        let v = Divisibility::value(a as f64, b as f64);
        let w = Divisibility::value((a + b) as f64, b as f64);
        prop_assert!((v - w).abs() < 1e-12);
    }

    #[test]
    fn disjunction_and_conjunction_are_monotone(seed in any::<u64>(), split in 1usize..5) {
        let b = boom();
        let children = b.constraints.children().to_vec();
        let split = split.min(children.len() - 1);
        let cfg = b.space.random_configuration(&mut ChaCha8Rng::seed_from_u64(seed));
        let values = b.space.numeric_values(&cfg);
        let eval = |n: ConstraintNode| ConstraintTree::from_nodes(&b.space, vec![n]).smooth(&values).unwrap();
        let any_small = eval(ConstraintNode::Any(children[..split].to_vec()));
        let any_big = eval(ConstraintNode::Any(children.clone()));
        let all_small = eval(ConstraintNode::All(children[..split].to_vec()));
        let all_big = eval(ConstraintNode::All(children.clone()));
        prop_assert!(any_big >= any_small);
        prop_assert!(all_big <= all_small);
    }

    #[test]
    fn smooth_gradient_matches_differences(seed in any::<u64>()) {
        let b = boom();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = b.space.random_configuration(&mut rng);
        let mut values = b.space.numeric_values(&cfg);
        // move off the lattice to avoid min/max kinks at ties
        for v in values.iter_mut() {
            *v += 0.1 + 0.3 * rand::Rng::gen::<f64>(&mut rng);
        }
        let (f, g) = b.constraints.smooth_gradient(&values).unwrap();
        prop_assert!((f - b.constraints.smooth(&values).unwrap()).abs() < 1e-12);
        for i in 0..values.len() {
            let h = 1e-6;
            let mut up = values.clone();
            up[i] += h;
            let mut dn = values.clone();
            dn[i] -= h;
            let fd = (b.constraints.smooth(&up).unwrap() - b.constraints.smooth(&dn).unwrap()) / (2.0 * h);
            // skip the rare case where the step crosses a min/max switch
            let kink = (b.constraints.smooth(&up).unwrap() + b.constraints.smooth(&dn).unwrap() - 2.0 * f).abs() > 1e-6;
            if !kink {
                prop_assert!((g[i] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "{} vs {}", g[i], fd);
            }
        }
    }

    #[test]
    fn prediction_is_snap_invariant(seed in any::<u64>()) {
        let space = small_space();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<EncodedPoint> = (0..6)
            .map(|_| EncodedPoint::new(space.random_relaxed(&mut rng)).unwrap())
            .collect();
        let ys: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        let m = GpModel::condition(Snapping::On(space.clone()), &xs, &ys, &KernelParams::new(space.encoded_dim())).unwrap();
        let q = space.random_relaxed(&mut rng);
        let s = space.snap_coords(&q).unwrap();
        let (a, b) = (m.predict(&q).unwrap(), m.predict(&s).unwrap());
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert_eq!(a.1.to_bits(), b.1.to_bits());
        prop_assert!(a.1 >= 0.0);
    }

    #[test]
    fn extra_data_never_raises_variance(seed in any::<u64>()) {
        let space = small_space();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // distinct inputs: a repeated input with a different target is merged
        // with inflated noise, which may legitimately raise its variance
        let mut cfgs: Vec<Configuration> = Vec::new();
        while cfgs.len() < 7 {
            let c = space.random_configuration(&mut rng);
            if !cfgs.contains(&c) {
                cfgs.push(c);
            }
        }
        let xs: Vec<EncodedPoint> = cfgs.iter().map(|c| space.encode(c).unwrap()).collect();
        let ys: Vec<f64> = (0..7).map(|i| (i as f64).cos()).collect();
        let params = KernelParams { noise_variance: 1e-4, ..KernelParams::new(space.encoded_dim()) };
        let small = GpModel::condition(Snapping::On(space.clone()), &xs[..6], &ys[..6], &params).unwrap();
        let big = GpModel::condition(Snapping::On(space.clone()), &xs, &ys, &params).unwrap();
        for i in 0..space.size() {
            let q = space.encode(&space.config_at(i)).unwrap();
            // standardized variance ignores the targets, so the fits compare
            let (_, vs) = small.predict_standardized(q.coords()).unwrap();
            let (_, vb) = big.predict_standardized(q.coords()).unwrap();
            prop_assert!(vb <= vs + 1e-9, "{} > {}", vb, vs);
        }
    }

    #[test]
    fn ei_is_translation_consistent(m in -5.0f64..5.0, s in 0.01f64..3.0, b in -5.0f64..5.0, shift in -100.0f64..100.0) {
        let e1 = expected_improvement(m, s * s, b);
        let e2 = expected_improvement(m + shift, s * s, b + shift);
        prop_assert!((e1 - e2).abs() <= 1e-9 * e1.abs().max(1.0));
        prop_assert!(e1 >= 0.0);
    }

    #[test]
    fn shifted_targets_leave_acquisition_unchanged(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let space = small_space();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<EncodedPoint> = (0..5)
            .map(|_| space.encode(&space.random_configuration(&mut rng)).unwrap())
            .collect();
        let ys: Vec<f64> = (0..5).map(|i| (i as f64 * 1.3).sin()).collect();
        let shifted: Vec<f64> = ys.iter().map(|y| y + shift).collect();
        let params = KernelParams::new(space.encoded_dim());
        let m1 = GpModel::condition(Snapping::On(space.clone()), &xs, &ys, &params).unwrap();
        let m2 = GpModel::condition(Snapping::On(space.clone()), &xs, &shifted, &params).unwrap();
        let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let ctx = |m: &GpModel, b: f64| {
            let q = space.random_relaxed(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
            AcquisitionContext {
                model: m,
                space: &space,
                tree: None,
                best_feasible: Some(b),
                cost: None,
                schedule: CoolingSchedule::default(),
                iteration: 0,
            }
            .expected_improvement(&q)
            .unwrap()
        };
        let (e1, e2) = (ctx(&m1, best), ctx(&m2, best + shift));
        prop_assert!((e1 - e2).abs() <= 1e-9 * e1.abs().max(1.0), "{} vs {}", e1, e2);
    }

    #[test]
    fn store_invariants(seed in any::<u64>(), n in 1usize..15) {
        let space = small_space();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = CheckpointStore::new(space.clone());
        for k in 0..n {
            let c = space.random_configuration(&mut rng);
            let r = EvaluationResult::ok(100 + k as u64, 50.0, 10, 1.0, 1.0);
            store.insert(CheckpointRecord::new(&space, c, r, 2.0 + k as f64, "2025-01-01T00:00:00Z".into()).unwrap());
        }
        let w = DistanceWeights::new((0..space.len()).map(|i| 0.5 + i as f64).collect()).unwrap();
        for i in 0..space.size() {
            let x = space.config_at(i);
            prop_assert_eq!(store.cost_estimate(&x, &w) == 0.0, store.lookup(&x).is_some());
            let (_, d) = store.match_config(&x, &w).unwrap();
            for r in store.records() {
                prop_assert!(d <= weighted_distance(&space, &x, &r.config, &w).unwrap());
            }
        }
        let dir = tempfile::tempdir().unwrap();
        store.persist(dir.path()).unwrap();
        let back = CheckpointStore::load(dir.path(), space.clone()).unwrap();
        prop_assert_eq!(back.records(), store.records());
    }

    #[test]
    fn warm_start_is_feasible_and_deterministic(seed in any::<u64>(), budget in 1usize..30) {
        let b = boom();
        let got = warm_start_configs(&b.space, &b.constraints, seed, budget).unwrap();
        prop_assert_eq!(got.len(), budget);
        prop_assert!(got.iter().all(|c| b.constraints.exact(&b.space, c)));
        prop_assert_eq!(got, warm_start_configs(&b.space, &b.constraints, seed, budget).unwrap());
    }

    #[test]
    fn exact_arrays_are_balanced(levels in proptest::collection::vec(2usize..6, 2..6), seed in any::<u64>()) {
        let oa = generate_oa(&levels, seed).unwrap();
        prop_assert!(oa.rows.iter().all(|r| r.iter().zip(&levels).all(|(v, l)| v < l)));
        if oa.exact {
            let n = oa.runs();
            for i in 0..levels.len() {
                for j in i + 1..levels.len() {
                    let want = n / (levels[i] * levels[j]);
                    prop_assert!(oa.pair_counts(i, j).iter().all(|&c| c == want));
                }
            }
        }
    }

    #[test]
    fn eet_is_monotone(cycles in 1u64..10_000_000, fmax in 1.0f64..500.0) {
        let base = estimated_execution_time_ms(&EvaluationResult::ok(cycles, fmax, 1, 1.0, 1.0)).unwrap();
        let faster = estimated_execution_time_ms(&EvaluationResult::ok(cycles, fmax * 1.01, 1, 1.0, 1.0)).unwrap();
        let longer = estimated_execution_time_ms(&EvaluationResult::ok(cycles + 1, fmax, 1, 1.0, 1.0)).unwrap();
        prop_assert!(faster < base && longer > base);
    }
}

#[test]
fn closer_reference_never_takes_longer() {
    let b = boom();
    let model = b.model.bind(b.space.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    use aspo_core::checkpoint::SynthesisTimeModel;
    for _ in 0..500 {
        let x = b.space.random_configuration(&mut rng);
        let r1 = b.space.random_configuration(&mut rng);
        let r2 = b.space.random_configuration(&mut rng);
        let w = model.time_weights();
        let (d1, d2) = (
            weighted_distance(&b.space, &x, &r1, w).unwrap(),
            weighted_distance(&b.space, &x, &r2, w).unwrap(),
        );
        let (t1, t2) = (
            model.synthesis_minutes(&x, Some(&r1)),
            model.synthesis_minutes(&x, Some(&r2)),
        );
        if d1 <= d2 {
            assert!(t1 <= t2);
        } else {
            assert!(t2 <= t1);
        }
    }
}

#[test]
fn default_satisfies_bundled_constraints() {
    let b = boom();
    assert!(b
        .constraints
        .exact(&b.space, &b.space.default_configuration()));
    assert!(!b.constraints.referenced_params().is_empty());
}

#[test]
fn run_invariants_hold() {
    let b = boom();
    for method in [
        Method::Aspo,
        Method::Random,
        Method::VanillaBo,
        Method::HillClimb,
    ] {
        let problem =
            Problem::synthetic(b.space.clone(), b.constraints.clone(), &b.model, "qsort", 5)
                .unwrap();
        let rc = RunConfig {
            budget_iterations: 12,
            seed: 5,
            benchmark: "qsort".into(),
            tdt_limit_minutes: Some(500.0),
            stagnation_window: None,
            ..RunConfig::default()
        };
        let r = run(problem, &rc, method).unwrap();
        let mut prev = f64::INFINITY;
        let mut clock = 0.0;
        for h in &r.history {
            let best = h.best_eet_ms.unwrap_or(f64::INFINITY);
            assert!(best <= prev);
            prev = best;
            clock += h.result.eval_minutes;
            assert!((h.tdt_minutes - clock).abs() < 1e-9);
        }
        let min_valid = r
            .history
            .iter()
            .filter_map(|h| estimated_execution_time_ms(&h.result).ok())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_eet_ms.unwrap_or(f64::INFINITY), min_valid);
        let invalid = r.history.iter().filter(|h| !h.result.valid()).count();
        assert_eq!(r.idr(), Some(invalid as f64 / r.history.len() as f64));
        // overshoot of the limit is bounded by one full build
        let limit = 500.0 * rc.time_compression;
        assert!(r.tdt_minutes <= limit + 80.6 * rc.time_compression + 1e-9);
        if method == Method::Aspo {
            assert!(r.history.iter().all(|h| h.result.failure_stage().is_none()));
            let configs: Vec<&Configuration> = r
                .history
                .iter()
                .filter(|h| !h.cache_hit)
                .map(|h| &h.config)
                .collect();
            let mut uniq = configs.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), configs.len());
        }
    }
}
