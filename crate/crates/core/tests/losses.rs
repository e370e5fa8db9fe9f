use mbrl_core::counterexamples::build_prop1;
use mbrl_core::losses::*;
use mbrl_core::mdp_core::{Distribution, DeterministicModel, Mdp, MdpBuilder, Occupancy, Policy};
use mbrl_core::random::{perturb_kernels, random_discounted};
use mbrl_core::sampling::{sample_trajectories, sample_tuples};
use mbrl_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn chain() -> Mdp {
    MdpBuilder::episodic(3, ["a", "b"])
        .layer(["c0"])
        .layer(["c1"])
        .layer(["c2"])
        .layer(["c3"])
        .row(0, "c0", 0, 1.0, Distribution::point("c1"))
        .row(0, "c0", 1, 0.0, Distribution::point("c1"))
        .row(1, "c1", 0, 0.5, Distribution::point("c2"))
        .row(1, "c1", 1, 0.0, Distribution::point("c2"))
        .row(2, "c2", 0, 0.0, Distribution::point("c3"))
        .row(2, "c2", 1, 1.0, Distribution::point("c3"))
        .initial("c0")
        .build()
        .unwrap()
}

#[test]
fn deterministic_truth_has_zero_losses() {
    let m = chain();
    let data = sample_trajectories(&m, &Policy::Uniform, 50, 1).unwrap();
    assert_eq!(mle_loss(&m, &data).unwrap().loss, 0.0);
    assert_eq!(reward_prediction_loss_empirical(&m, &data, 2).unwrap().loss, 0.0);
    assert_eq!(reward_prediction_loss_expected(&m, &m, &Policy::Uniform).unwrap().loss, 0.0);
    let emb = Embedding::new((0..4).map(|i| (format!("c{i}"), vec![i as f64]))).unwrap();
    let det = DeterministicModel::try_from_mdp(m.clone()).unwrap();
    assert_eq!(l2_loss(&det, &data, &emb, true).unwrap().loss, 0.0);
}

#[test]
fn uniform_candidate_costs_log_k() {
    let truth = MdpBuilder::discounted(0.9, ["a"])
        .layer(["x", "y", "z"])
        .row(0, "x", 0, 0.0, Distribution::point("y"))
        .row(0, "y", 0, 0.0, Distribution::point("z"))
        .row(0, "z", 0, 0.0, Distribution::point("x"))
        .initial("x")
        .build()
        .unwrap();
    let uniform = Distribution::uniform(["x", "y", "z"]).unwrap();
    let cand = MdpBuilder::discounted(0.9, ["a"])
        .layer(["x", "y", "z"])
        .row(0, "x", 0, 0.0, uniform.clone())
        .row(0, "y", 0, 0.0, uniform.clone())
        .row(0, "z", 0, 0.0, uniform)
        .initial("x")
        .build()
        .unwrap();
    let d = Occupancy::from_weights(1, [("x", 0, 0.2), ("y", 0, 0.3), ("z", 0, 0.5)]).unwrap();
    let data = sample_tuples(&truth, &d, 100, 4).unwrap();
    let r = mle_loss(&cand, &data).unwrap();
    assert!((r.loss - 3f64.ln()).abs() < 1e-12);
    assert_eq!(r.zero_prob_events, 0);

    // Zero-probability events are counted, not turned into infinities.
    let r = mle_loss(&truth, &sample_tuples(&cand, &d, 100, 4).unwrap()).unwrap();
    assert!(r.zero_prob_events >= 1);
    assert!(r.loss.is_finite());
}

#[test]
fn expected_mle_decomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let truth = random_discounted(&mut rng, 3, 2, 0.9).unwrap();
        let cand = perturb_kernels(&mut rng, &truth).unwrap();
        let d = mbrl_core::mdp_core::occupancy(&truth, &Policy::Uniform).unwrap();
        let own = expected_mle_loss(&truth, &truth, &d).unwrap();
        let dec = own.decomposition.unwrap();
        assert!(dec.excess.abs() < 1e-12);
        assert!((own.loss - dec.entropy).abs() < 1e-12);
        let other = expected_mle_loss(&cand, &truth, &d).unwrap();
        if !other.infinite {
            let od = other.decomposition.unwrap();
            assert!(od.excess >= 0.0);
            assert!((od.entropy + od.excess - other.loss).abs() < 1e-9);
            assert!((other.loss - own.loss - od.excess).abs() < 1e-9);
        }
    }
}

#[test]
fn infinite_expected_loss_is_flagged() {
    let truth = MdpBuilder::discounted(0.5, ["a"])
        .layer(["x", "y"])
        .row(0, "x", 0, 0.0, Distribution::uniform(["x", "y"]).unwrap())
        .row(0, "y", 0, 0.0, Distribution::uniform(["x", "y"]).unwrap())
        .initial("x")
        .build()
        .unwrap();
    let cand = MdpBuilder::discounted(0.5, ["a"])
        .layer(["x", "y"])
        .row(0, "x", 0, 0.0, Distribution::point("x"))
        .row(0, "y", 0, 0.0, Distribution::point("x"))
        .initial("x")
        .build()
        .unwrap();
    let d = Occupancy::from_weights(1, [("x", 0, 1.0)]).unwrap();
    let r = expected_mle_loss(&cand, &truth, &d).unwrap();
    assert!(r.infinite);
    assert!(r.decomposition.unwrap().excess.is_infinite());
}

#[test]
fn expected_mle_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let truth = random_discounted(&mut rng, 3, 2, 0.9).unwrap();
    // Dense candidate so every observed transition has positive mass.
    let space = truth.state_space().unwrap();
    let mut b = MdpBuilder::discounted(0.9, ["a0", "a1"]).layer(space.layer(0).to_vec()).initial("s0");
    for s in space.layer(0) {
        for a in 0..2 {
            let row = truth.transition(0, s, a).unwrap();
            let mixed: Vec<(String, f64)> = space
                .layer(0)
                .iter()
                .map(|t| (t.clone(), 0.5 * row.prob(t) + 0.5 / 3.0))
                .collect();
            b = b.row(0, s, a, truth.reward(0, s, a).unwrap(), Distribution::from_pairs(mixed).unwrap());
        }
    }
    let cand = b.build().unwrap();
    let d = mbrl_core::mdp_core::occupancy(&truth, &Policy::Uniform).unwrap();
    let exact = expected_mle_loss(&cand, &truth, &d).unwrap();
    let data = sample_tuples(&truth, &d, 1_000_000, 8).unwrap();
    let mc = mle_loss(&cand, &data).unwrap();
    assert!((mc.loss - exact.loss).abs() <= 3.0 * mc.standard_error, "{} vs {} (se {})", mc.loss, exact.loss, mc.standard_error);
}

#[test]
fn l2_loss_examples() {
    let emb = Embedding::new([("x", vec![0.0]), ("y", vec![1.0]), ("z", vec![2.0])]).unwrap();
    let det = DeterministicModel::try_from_mdp(
        MdpBuilder::discounted(0.5, ["a"])
            .layer(["x", "y", "z"])
            .row(0, "x", 0, 0.0, Distribution::point("x"))
            .row(0, "y", 0, 0.0, Distribution::point("y"))
            .row(0, "z", 0, 0.0, Distribution::point("y"))
            .initial("x")
            .build()
            .unwrap(),
    )
    .unwrap();
    let truth = MdpBuilder::discounted(0.5, ["a"])
        .layer(["x", "y", "z"])
        .row(0, "x", 0, 0.0, Distribution::point("y"))
        .row(0, "y", 0, 0.0, Distribution::uniform(["x", "z"]).unwrap())
        .row(0, "z", 0, 0.0, Distribution::point("y"))
        .initial("x")
        .build()
        .unwrap();
    // Data s' = y (1.0) with prediction x (0.0): squared loss 1.
    let d = Occupancy::from_weights(1, [("x", 0, 1.0)]).unwrap();
    let data = sample_tuples(&truth, &d, 10, 0).unwrap();
    assert_eq!(l2_loss(&det, &data, &emb, true).unwrap().loss, 1.0);
    // Stochastic truth over {0, 2}; predicting the mean 1 is optimal yet costs 1.
    let d = Occupancy::from_weights(1, [("y", 0, 1.0)]).unwrap();
    let r = expected_l2_loss(&det, &truth, &d, &emb, true).unwrap();
    assert!((r.loss - 1.0).abs() < 1e-12);
    let missing = Embedding::new([("x", vec![0.0])]).unwrap();
    assert!(matches!(l2_loss(&det, &data, &missing, true), Err(Error::MissingEmbedding(_))));
}

#[test]
fn prop1_reward_prediction_monte_carlo() {
    let inst = build_prop1().unwrap();
    let data = sample_trajectories(&inst.truth, &inst.pi_d, 100_000, 7).unwrap();
    for (cand, exact) in [(&inst.truth, 0.5), (&inst.wrong, 0.25)] {
        let r = reward_prediction_loss_empirical(cand, &data, 7).unwrap();
        assert!((r.loss - exact).abs() < 0.01);
        assert!((r.loss - exact).abs() <= 3.0 * r.standard_error);
    }
    // Deterministic given the seed.
    let a = reward_prediction_loss_empirical(&inst.truth, &data, 7).unwrap();
    let b = reward_prediction_loss_empirical(&inst.truth, &data, 7).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reward_prediction_standard_error_shrinks() {
    let inst = build_prop1().unwrap();
    let small = sample_trajectories(&inst.truth, &inst.pi_d, 1_000, 3).unwrap();
    let large = sample_trajectories(&inst.truth, &inst.pi_d, 100_000, 3).unwrap();
    let se_small = reward_prediction_loss_empirical(&inst.truth, &small, 3).unwrap().standard_error;
    let se_large = reward_prediction_loss_empirical(&inst.truth, &large, 3).unwrap().standard_error;
    let ratio = se_small / se_large;
    // 1/sqrt(n) scaling predicts a ratio of 10.
    assert!((5.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn reward_prediction_requires_known_states() {
    let inst = build_prop1().unwrap();
    let other = chain();
    let data = sample_trajectories(&inst.truth, &inst.pi_d, 5, 0).unwrap();
    assert!(reward_prediction_loss_empirical(&other, &data, 0).is_err());
    assert!(reward_prediction_loss_expected(&other, &inst.truth, &inst.pi_d).is_err());
}

#[test]
fn pinsker_examples() {
    let p = Distribution::from_pairs([("a", 1.0), ("b", 0.0)]).unwrap();
    let q = Distribution::uniform(["a", "b"]).unwrap();
    let r = pinsker_check(&p, &q);
    assert!((r.tv - 0.5).abs() < 1e-15);
    assert!((r.l1 - 1.0).abs() < 1e-15);
    assert!((r.bound - (2f64.ln() / 2.0).sqrt()).abs() < 1e-12);
    assert!(r.holds);
    let same = pinsker_check(&q, &q);
    assert_eq!((same.tv, same.kl, same.holds), (0.0, 0.0, true));
    let inf = pinsker_check(&q, &Distribution::point("a"));
    assert!(inf.kl_infinite && inf.holds);
}

#[test]
fn loss_report_json_shape() {
    let inst = build_prop1().unwrap();
    let r = reward_prediction_loss_expected(&inst.wrong, &inst.truth, &inst.pi_d).unwrap();
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    for key in ["loss", "se", "zero_prob_events", "per_layer"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}
