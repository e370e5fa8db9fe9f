use std::collections::BTreeMap;

use mbrl_core::counterexamples::{build_prop1, build_prop2};
use mbrl_core::diagnostics::*;
use mbrl_core::losses::Embedding;
use mbrl_core::mdp_core::{occupancy, DeterministicModel, Distribution, Mdp, MdpBuilder, Policy};
use mbrl_core::random::{perturb_kernels, random_discounted, random_episodic, random_policy};
use mbrl_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_lemma(model: &Mdp, truth: &Mdp, pi: &Policy) {
    let r = simulation_lemma_terms(model, truth, pi).unwrap();
    let scale = 1.0 + r.j_truth.abs().max(r.j_model.abs());
    assert!((r.j_model - r.j_truth - r.decomposition_signed).abs() <= 1e-8 * scale, "{r:?}");
    assert!(r.lhs <= r.tv_bound + 1e-9 * scale, "{r:?}");
    assert!(r.tv_bound <= r.l1_bound + 1e-12, "{r:?}");
}

#[test]
fn simulation_lemma_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..200 {
        let truth = if trial % 2 == 0 {
            random_discounted(&mut rng, 2 + trial % 5, 2, [0.5, 0.8, 0.95][trial % 3]).unwrap()
        } else {
            random_episodic(&mut rng, 1 + trial % 4, 3, 2).unwrap()
        };
        let model = perturb_kernels(&mut rng, &truth).unwrap();
        let pi = random_policy(&mut rng, &truth).unwrap();
        check_lemma(&model, &truth, &pi);
        let same = simulation_lemma_terms(&truth, &truth, &pi).unwrap();
        assert_eq!((same.l1_bound, same.tv_bound), (0.0, 0.0));
        assert!(same.lhs < 1e-12);
    }
}

#[test]
fn simulation_lemma_on_counterexamples() {
    let p1 = build_prop1().unwrap();
    let r = simulation_lemma_terms(&p1.wrong, &p1.truth, &p1.pi_target).unwrap();
    assert!((r.lhs - 0.5).abs() < 1e-12);
    assert!((r.decomposition_signed + 0.5).abs() < 1e-12);
    // The `prop2` rewards agree on the truth's support; the model's range is larger.
    let p2 = build_prop2(4).unwrap();
    check_lemma(&p2.wrong, &p2.truth, &p2.pi_target);
    let r = simulation_lemma_terms(&p2.wrong, &p2.truth, &p2.pi_target).unwrap();
    assert_eq!((r.j_model, r.j_truth), (100.0, 0.0));
    // Rewards that differ on the truth's support are rejected.
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let a = random_discounted(&mut rng, 3, 2, 0.9).unwrap();
    let b = random_discounted(&mut rng, 3, 2, 0.9).unwrap();
    assert!(matches!(simulation_lemma_terms(&a, &b, &Policy::Uniform), Err(Error::RewardMismatch { .. })));
}

/// x → z (worth 0) under the truth, x → g (worth V_max) under the model.
#[test]
fn tv_bound_is_attained() {
    let gamma = 0.8;
    let build = |target: &str| {
        MdpBuilder::discounted(gamma, ["a"])
            .layer(["x", "g", "z"])
            .row(0, "x", 0, 0.0, Distribution::point(target))
            .row(0, "g", 0, 1.0, Distribution::point("g"))
            .row(0, "z", 0, 0.0, Distribution::point("z"))
            .initial("x")
            .build()
            .unwrap()
    };
    let (truth, model) = (build("z"), build("g"));
    let r = simulation_lemma_terms(&model, &truth, &Policy::Uniform).unwrap();
    let vmax = 1.0 / (1.0 - gamma);
    assert!((r.lhs - gamma * vmax).abs() < 1e-9);
    assert!((r.tv_bound - r.lhs).abs() < 1e-9);
    assert!((r.l1_bound - 2.0 * r.tv_bound / gamma).abs() < 1e-9);
}

#[test]
fn coverage_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let m = random_episodic(&mut rng, 3, 3, 2).unwrap();
    let pi = random_policy(&mut rng, &m).unwrap();
    let d = occupancy(&m, &pi).unwrap();
    let c = state_action_coverage(&m, &pi, &d).unwrap();
    assert!((c.ratio - 1.0).abs() < 1e-9 && !c.infinite);
    let t = trajectory_coverage(&m, &pi, &pi).unwrap();
    assert!((t.ratio - 1.0).abs() < 1e-9);

    // Never playing R leaves the target unsupported.
    let p1 = build_prop1().unwrap();
    let always_l = occupancy(&p1.truth, &Policy::Fixed { action: 0 }).unwrap();
    let c = state_action_coverage(&p1.truth, &p1.pi_target, &always_l).unwrap();
    assert!(c.infinite && c.ratio.is_infinite());
    let loc = c.argmax.unwrap();
    assert_eq!((loc.state.as_str(), loc.action), ("C", 1));

    // B is never reached, yet uniform data covers the target with ratio 2.
    let uniform = occupancy(&p1.truth, &p1.pi_d).unwrap();
    let c = state_action_coverage(&p1.truth, &p1.pi_target, &uniform).unwrap();
    assert!((c.ratio - 2.0).abs() < 1e-12);
    // Under the wrong model the target only visits B, which the data never sees.
    let c = model_state_action_coverage(&p1.wrong, &p1.pi_target, &uniform).unwrap();
    assert!(c.infinite);
}

#[test]
fn prop2_coverage_gap() {
    let inst = build_prop2(10).unwrap();
    let d = occupancy(&inst.truth, &inst.pi_d).unwrap();
    let sa = state_action_coverage(&inst.truth, &inst.pi_target, &d).unwrap();
    let traj = trajectory_coverage(&inst.truth, &inst.pi_target, &inst.pi_d).unwrap();
    assert!((sa.ratio - 2.0).abs() < 1e-12);
    assert!((traj.ratio - 1024.0).abs() < 1e-9);
}

#[test]
fn lipschitz_examples() {
    let emb = Embedding::new([("a", vec![0.0, 0.0]), ("b", vec![3.0, 4.0]), ("c", vec![3.0, 4.0])]).unwrap();
    let values = |v: [f64; 3]| -> BTreeMap<String, f64> {
        ["a", "b", "c"].iter().map(|s| s.to_string()).zip(v).collect()
    };
    assert_eq!(lipschitz_constant(&values([1.0, 1.0, 1.0]), &emb).unwrap().constant, 0.0);
    let r = lipschitz_constant(&values([0.0, 10.0, 10.0]), &emb).unwrap();
    assert!((r.constant - 2.0).abs() < 1e-12);
    assert_eq!(r.argmax, Some(("a".into(), "b".into())));
    let r = lipschitz_constant(&values([0.0, 1.0, 2.0]), &emb).unwrap();
    assert!(r.infinite);
    assert_eq!(r.argmax, Some(("b".into(), "c".into())));
    let single: BTreeMap<String, f64> = [("a".to_string(), 0.0)].into();
    assert!(lipschitz_constant(&single, &emb).is_err());
}

/// A path p0 → p1 → p2 ⟲ whose model sends p0 to an off-path state `x`
/// that sits next to p1 in the embedding but is worth far more.
fn illegal_state_pair() -> (DeterministicModel, DeterministicModel, Embedding) {
    let path = |b: MdpBuilder| {
        b.row(0, "p1", 0, 0.1, Distribution::point("p2"))
            .row(0, "p2", 0, 0.2, Distribution::point("p2"))
            .initial("p0")
    };
    let truth = path(
        MdpBuilder::discounted(0.5, ["a"])
            .layer(["p0", "p1", "p2"])
            .row(0, "p0", 0, 0.0, Distribution::point("p1")),
    )
    .build()
    .unwrap();
    let model = path(
        MdpBuilder::discounted(0.5, ["a"])
            .layer(["p0", "p1", "p2", "x"])
            .row(0, "p0", 0, 0.0, Distribution::point("x"))
            .row(0, "x", 0, 1.0, Distribution::point("x")),
    )
    .build()
    .unwrap();
    let emb = Embedding::new([("p0", vec![0.0]), ("p1", vec![1.0]), ("p2", vec![2.0]), ("x", vec![1.1])]).unwrap();
    (
        DeterministicModel::try_from_mdp(model).unwrap(),
        DeterministicModel::try_from_mdp(truth).unwrap(),
        emb,
    )
}

#[test]
fn smoothness_breaks_on_illegal_states() {
    let (model, truth, emb) = illegal_state_pair();
    let legal = smoothness_gap_report(&model, &truth, &Policy::Uniform, &emb, LipschitzDomain::Legal).unwrap();
    assert_eq!(legal.violations, 1);
    let bad = legal.rows.iter().find(|r| !r.holds).unwrap();
    assert_eq!((bad.state.as_str(), bad.predicted.as_str(), bad.actual.as_str()), ("p0", "x", "p1"));
    assert!(bad.slack < 0.0);
    assert!(legal.weighted_value_gap > legal.weighted_smoothness_bound);

    let all = smoothness_gap_report(&model, &truth, &Policy::Uniform, &emb, LipschitzDomain::All).unwrap();
    assert_eq!(all.violations, 0);
    assert!(all.lipschitz.constant > legal.lipschitz.constant);
}

#[test]
fn smoothness_of_exact_model_is_trivial() {
    let (_, truth, emb) = illegal_state_pair();
    let r = smoothness_gap_report(&truth, &truth, &Policy::Uniform, &emb, LipschitzDomain::Legal).unwrap();
    assert_eq!(r.violations, 0);
    assert_eq!((r.weighted_value_gap, r.weighted_smoothness_bound, r.weighted_tv_bound), (0.0, 0.0, 0.0));
}

/// Deterministic discounted MDP on `n` points of a line with shared rewards.
fn random_line_pair(rng: &mut ChaCha8Rng, n: usize) -> (DeterministicModel, DeterministicModel, Embedding) {
    let states: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
    let rewards: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
    let build = |rng: &mut ChaCha8Rng| {
        let mut b = MdpBuilder::discounted(0.9, ["a", "b"]).layer(states.clone()).initial("q0");
        for (i, s) in states.iter().enumerate() {
            for a in 0..2 {
                let next = &states[rng.gen_range(0..n)];
                b = b.row(0, s, a, rewards[i][a], Distribution::point(next.clone()));
            }
        }
        DeterministicModel::try_from_mdp(b.build().unwrap()).unwrap()
    };
    let truth = build(rng);
    let model = build(rng);
    let emb = Embedding::new(states.iter().enumerate().map(|(i, s)| (s.clone(), vec![i as f64 * 0.5]))).unwrap();
    (model, truth, emb)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectory_coverage_dominates_state_action(seed in any::<u64>(), discounted in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = if discounted {
            random_discounted(&mut rng, 3, 2, 0.7).unwrap()
        } else {
            random_episodic(&mut rng, 3, 3, 2).unwrap()
        };
        let pi = random_policy(&mut rng, &m).unwrap();
        let pi_d = random_policy(&mut rng, &m).unwrap();
        if !m.is_episodic() {
            // Trajectory coverage is defined for episodic MDPs only.
            prop_assert!(trajectory_coverage(&m, &pi, &pi_d).is_err());
            return Ok(());
        }
        let d = occupancy(&m, &pi_d).unwrap();
        let sa = state_action_coverage(&m, &pi, &d).unwrap();
        let traj = trajectory_coverage(&m, &pi, &pi_d).unwrap();
        prop_assert!(sa.ratio >= 1.0 - 1e-9);
        prop_assert!(traj.ratio >= sa.ratio * (1.0 - 1e-9));
    }

    #[test]
    fn smoothness_holds_over_all_states(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (model, truth, emb) = random_line_pair(&mut rng, n);
        let pi = random_policy(&mut rng, truth.as_mdp()).unwrap();
        let r = smoothness_gap_report(&model, &truth, &pi, &emb, LipschitzDomain::All).unwrap();
        prop_assert_eq!(r.violations, 0);
        prop_assert!(r.weighted_value_gap <= r.weighted_smoothness_bound + 1e-9);
        prop_assert!(r.weighted_value_gap <= r.weighted_tv_bound + 1e-9);
    }
}
