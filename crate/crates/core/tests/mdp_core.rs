use mbrl_core::counterexamples::{build_prop1, build_prop2};
use mbrl_core::mdp_core::*;
use mbrl_core::random::{all_deterministic_policies, random_discounted, random_episodic, random_policy};
use mbrl_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `V = (I − γ P_π)^{-1} r_π` by a direct linear solve.
fn linear_solve_values(m: &Mdp, pi: &Policy) -> Vec<f64> {
    let gamma = m.gamma().unwrap();
    let space = m.state_space().unwrap();
    let states = space.layer(0);
    let n = states.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for (i, s) in states.iter().enumerate() {
        let probs = pi.action_probs(0, s, m.num_actions()).unwrap();
        for (act, &pa) in probs.iter().enumerate() {
            r[i] += pa * m.reward(0, s, act).unwrap();
            for (t, p) in m.transition(0, s, act).unwrap().iter() {
                let j = space.index_of(0, t).unwrap();
                a[(i, j)] -= gamma * pa * p;
            }
        }
    }
    let v = a.lu().solve(&r).unwrap();
    v.iter().copied().collect()
}

#[test]
fn discounted_values_match_linear_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..50 {
        let gamma = [0.5, 0.9, 0.99][trial % 3];
        let m = random_discounted(&mut rng, 3 + trial % 3, 2, gamma).unwrap();
        let pi = random_policy(&mut rng, &m).unwrap();
        let v = value_function(&m, &pi).unwrap();
        let oracle = linear_solve_values(&m, &pi);
        for (i, s) in v.space.layer(0).iter().enumerate() {
            assert!((v.get(0, s).unwrap() - oracle[i]).abs() < 1e-8, "trial {trial}");
        }
    }
}

#[test]
fn prop1_values() {
    let inst = build_prop1().unwrap();
    let v = value_function(&inst.truth, &inst.pi_target).unwrap();
    assert_eq!(v.get(0, "s_init"), Some(1.0));
    assert_eq!(expected_return(&inst.wrong, &inst.pi_target).unwrap(), 0.5);
    let planned = plan_optimal(&inst.truth).unwrap();
    assert_eq!(planned.action_probs(1, "A", 2).unwrap(), vec![1.0, 0.0]);
    assert_eq!(planned.action_probs(1, "C", 2).unwrap(), vec![0.0, 1.0]);
    assert_eq!(expected_return(&inst.truth, &planned).unwrap(), 1.0);
}

#[test]
fn zero_reward_mdp() {
    let m = MdpBuilder::episodic(2, ["a", "b", "c"])
        .layer(["s"])
        .layer(["t", "u"])
        .layer(["z"])
        .row(0, "s", 0, 0.0, Distribution::uniform(["t", "u"]).unwrap())
        .row(0, "s", 1, 0.0, Distribution::point("t"))
        .row(0, "s", 2, 0.0, Distribution::point("u"))
        .row(1, "t", 0, 0.0, Distribution::point("z"))
        .row(1, "t", 1, 0.0, Distribution::point("z"))
        .row(1, "t", 2, 0.0, Distribution::point("z"))
        .row(1, "u", 0, 0.0, Distribution::point("z"))
        .row(1, "u", 1, 0.0, Distribution::point("z"))
        .row(1, "u", 2, 0.0, Distribution::point("z"))
        .initial("s")
        .build()
        .unwrap();
    let v = value_function(&m, &Policy::Uniform).unwrap();
    assert!(v.values.iter().flatten().all(|&x| x == 0.0));
    let pi = plan_optimal(&m).unwrap();
    for (h, s) in [(0, "s"), (1, "t"), (1, "u")] {
        assert_eq!(pi.action_probs(h, s, 3).unwrap()[0], 1.0);
    }
}

#[test]
fn validate_reports_bad_rows() {
    assert!(validate(&build_prop1().unwrap().truth).is_empty());
    let m = MdpBuilder::discounted(0.9, ["a"])
        .layer(["x", "y"])
        .row(0, "x", 0, 0.5, Distribution::new_unchecked(vec!["x".into(), "y".into()], vec![0.5, 0.4]))
        .row(0, "y", 0, 0.5, Distribution::point("y"))
        .initial("x")
        .build()
        .unwrap();
    let v = validate(&m);
    assert_eq!(v.len(), 1);
    assert_eq!((v[0].state.as_str(), v[0].action.as_deref()), ("x", Some("a")));

    let m = MdpBuilder::discounted(0.9, ["a"])
        .layer(["x"])
        .row(0, "x", 0, 2.0, Distribution::point("x"))
        .initial("x")
        .build()
        .unwrap();
    assert_eq!(validate(&m).len(), 1);
}

#[test]
fn episodic_occupancy_is_normalised_per_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let m = random_episodic(&mut rng, 4, 3, 2).unwrap();
        let pi = random_policy(&mut rng, &m).unwrap();
        let occ = occupancy(&m, &pi).unwrap();
        assert_eq!(occ.num_layers(), 4);
        for h in 0..4 {
            assert!((occ.layer_mass(h) - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn self_loop_occupancy() {
    let m = MdpBuilder::discounted(0.7, ["a", "b"])
        .layer(["s"])
        .row(0, "s", 0, 1.0, Distribution::point("s"))
        .row(0, "s", 1, 0.0, Distribution::point("s"))
        .initial("s")
        .build()
        .unwrap();
    let pi = Policy::tabular([(0, "s", vec![0.3, 0.7])]);
    let occ = occupancy(&m, &pi).unwrap();
    assert!((occ.get(0, "s", 0) - 0.3).abs() < 1e-11);
    assert!((occ.get(0, "s", 1) - 0.7).abs() < 1e-11);
    assert!(occ.truncation_error < 1e-12);
}

#[test]
fn prop2_truth_occupancy_is_the_chain() {
    let inst = build_prop2(12).unwrap();
    let occ = occupancy(&inst.truth, &Policy::Fixed { action: 1 }).unwrap();
    for h in 0..12 {
        assert_eq!(occ.state_mass(h, &format!("s{}", "L".repeat(h))), 1.0);
    }
}

#[test]
fn plan_optimal_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..60 {
        let m = if trial % 2 == 0 {
            random_episodic(&mut rng, 1 + trial % 4, 2, 2).unwrap()
        } else {
            random_discounted(&mut rng, 2 + trial % 3, 2, 0.8).unwrap()
        };
        let planned = expected_return(&m, &plan_optimal(&m).unwrap()).unwrap();
        let best = all_deterministic_policies(&m)
            .unwrap()
            .iter()
            .map(|pi| expected_return(&m, pi).unwrap())
            .fold(f64::MIN, f64::max);
        assert!((planned - best).abs() < 1e-8, "trial {trial}: {planned} vs {best}");
        // No tabular policy does better either.
        let pi = random_policy(&mut rng, &m).unwrap();
        assert!(expected_return(&m, &pi).unwrap() <= planned + 1e-8);
    }
}

#[test]
fn procedural_and_tabulated_agree_bitwise() {
    let inst = build_prop2(6).unwrap();
    for m in [&inst.truth, &inst.wrong] {
        let table = m.tabulate().unwrap();
        for pi in [Policy::Uniform, Policy::Fixed { action: 1 }, Policy::Fixed { action: 0 }] {
            assert_eq!(
                expected_return(m, &pi).unwrap().to_bits(),
                expected_return(&table, &pi).unwrap().to_bits()
            );
            assert_eq!(occupancy(m, &pi).unwrap(), occupancy(&table, &pi).unwrap());
        }
        let a = value_function(m, &Policy::Uniform).unwrap();
        let b = value_function(&table, &Policy::Uniform).unwrap();
        assert_eq!(a.values, b.values);
    }
}

#[test]
fn enumeration_refuses_huge_trees() {
    let inst = build_prop2(20).unwrap();
    assert!(matches!(inst.wrong.state_space(), Err(Error::TooLarge { .. })));
    // Forward evaluation still works.
    assert_eq!(expected_return(&inst.wrong, &Policy::Fixed { action: 1 }).unwrap(), 100.0);
}

#[test]
fn json_round_trip() {
    let inst = build_prop1().unwrap();
    let json = MdpJson::from_mdp(&inst.truth).unwrap();
    let text = serde_json::to_string(&json).unwrap();
    let back: MdpJson = serde_json::from_str(&text).unwrap();
    let m = back.to_mdp().unwrap();
    assert_eq!(expected_return(&m, &inst.pi_target).unwrap(), 1.0);
    assert_eq!(MdpJson::from_mdp(&m).unwrap(), json);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = random_discounted(&mut rng, 4, 2, 0.9).unwrap();
    let back = MdpJson::from_mdp(&d).unwrap().to_mdp().unwrap();
    assert_eq!(
        expected_return(&d, &Policy::Uniform).unwrap(),
        expected_return(&back, &Policy::Uniform).unwrap()
    );
}

#[test]
fn deterministic_model_coercion() {
    assert!(DeterministicModel::try_from_mdp(build_prop1().unwrap().truth).is_err());
    let det = DeterministicModel::try_from_mdp(build_prop1().unwrap().wrong).unwrap();
    assert_eq!(det.next(0, "s_init", 1).unwrap(), "B");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn values_lie_in_range(seed in any::<u64>(), episodic in any::<bool>(), gamma in 0.0f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = if episodic {
            random_episodic(&mut rng, 3, 3, 2).unwrap()
        } else {
            random_discounted(&mut rng, 4, 2, gamma).unwrap()
        };
        let pi = random_policy(&mut rng, &m).unwrap();
        let v = value_function(&m, &pi).unwrap();
        for x in v.values.iter().flatten() {
            prop_assert!(*x >= -1e-12 && *x <= m.vmax() + 1e-9);
        }
    }

    #[test]
    fn return_equals_occupancy_weighted_reward(seed in any::<u64>(), episodic in any::<bool>(), gamma in 0.0f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = if episodic {
            random_episodic(&mut rng, 3, 3, 2).unwrap()
        } else {
            random_discounted(&mut rng, 4, 2, gamma).unwrap()
        };
        let pi = random_policy(&mut rng, &m).unwrap();
        let occ = occupancy(&m, &pi).unwrap();
        let mut total = 0.0;
        for (h, s, a, w) in occ.positive() {
            total += w * m.reward(h, s, a).unwrap();
        }
        let scale = match m.kind() {
            MdpKind::Episodic { .. } => 1.0,
            MdpKind::Discounted { gamma } => 1.0 / (1.0 - gamma),
        };
        prop_assert!((expected_return(&m, &pi).unwrap() - scale * total).abs() < 1e-8);
    }
}
