use mbrl_core::counterexamples::{build_prop1, build_prop2};
use mbrl_core::mdp_core::{occupancy, Distribution, MdpBuilder, Occupancy, Policy};
use mbrl_core::sampling::*;
use mbrl_core::Error;

fn two_state() -> mbrl_core::mdp_core::Mdp {
    MdpBuilder::discounted(0.9, ["a"])
        .layer(["x", "y"])
        .row(0, "x", 0, 1.0, Distribution::uniform(["x", "y"]).unwrap())
        .row(0, "y", 0, 0.0, Distribution::point("x"))
        .initial("x")
        .build()
        .unwrap()
}

#[test]
fn tuple_frequencies_concentrate() {
    let m = two_state();
    let d = Occupancy::from_weights(1, [("x", 0, 0.75), ("y", 0, 0.25)]).unwrap();
    assert!(sample_tuples(&m, &d, 0, 1).unwrap().is_empty());
    let data = sample_tuples(&m, &d, 100_000, 1).unwrap();
    data.check_consistency(&m).unwrap();
    let occ = empirical_occupancy(&data).unwrap();
    // 3σ of a binomial proportion at n = 1e5 is ≈ 0.004.
    assert!((occ.get(0, "x", 0) - 0.75).abs() < 0.01);
    assert!((occ.get(0, "y", 0) - 0.25).abs() < 0.01);
}

#[test]
fn self_loop_tuples_are_identical() {
    let m = MdpBuilder::discounted(0.5, ["a"])
        .layer(["s"])
        .row(0, "s", 0, 0.3, Distribution::point("s"))
        .initial("s")
        .build()
        .unwrap();
    let d = Occupancy::from_weights(1, [("s", 0, 1.0)]).unwrap();
    let data = sample_tuples(&m, &d, 5, 3).unwrap();
    let units = data.units();
    assert_eq!(units.len(), 5);
    assert!(units.iter().all(|u| u[0] == units[0][0]));
}

#[test]
fn kind_checks() {
    let prop1 = build_prop1().unwrap();
    let d = Occupancy::from_weights(2, [("s_init", 0, 1.0)]).unwrap();
    assert!(matches!(sample_tuples(&prop1.truth, &d, 3, 0), Err(Error::KindMismatch { .. })));
    assert!(matches!(
        sample_trajectories(&two_state(), &Policy::Uniform, 3, 0),
        Err(Error::KindMismatch { .. })
    ));
}

#[test]
fn prop1_data_never_visits_b() {
    let inst = build_prop1().unwrap();
    let data = sample_trajectories(&inst.truth, &Policy::Uniform, 4, 42).unwrap();
    assert_eq!(data.len(), 4);
    for t in data.trajectories().unwrap() {
        assert!(["A", "C"].contains(&t.steps[1].state.as_str()));
    }
    let big = sample_trajectories(&inst.truth, &Policy::Uniform, 20_000, 42).unwrap();
    assert!(big.trajectories().unwrap().iter().all(|t| t.steps[1].state != "B"));
    let occ = empirical_occupancy(&big).unwrap();
    let a = occ.state_mass(1, "A");
    let exact = occupancy(&inst.truth, &Policy::Uniform).unwrap().state_mass(1, "A");
    let sd = (exact * (1.0 - exact) / 20_000.0).sqrt();
    assert!((a - exact).abs() < 3.0 * sd);
}

#[test]
fn deterministic_chain_trajectories_share_states() {
    let inst = build_prop2(6).unwrap();
    let data = sample_trajectories(&inst.truth, &Policy::Uniform, 3, 5).unwrap();
    let ts = data.trajectories().unwrap();
    for t in ts {
        let states: Vec<_> = t.steps.iter().map(|s| &s.state).collect();
        let first: Vec<_> = ts[0].steps.iter().map(|s| &s.state).collect();
        assert_eq!(states, first);
    }
}

#[test]
fn reproducible_and_order_independent() {
    let inst = build_prop1().unwrap();
    let a = sample_trajectories(&inst.truth, &Policy::Uniform, 200, 9).unwrap();
    let b = sample_trajectories(&inst.truth, &Policy::Uniform, 200, 9).unwrap();
    assert_eq!(a, b);
    let t17 = sample_trajectory(&inst.truth, &Policy::Uniform, 9, 17).unwrap();
    assert_eq!(a.trajectories().unwrap()[17], t17);
    // A prefix of a larger batch is the smaller batch.
    let c = sample_trajectories(&inst.truth, &Policy::Uniform, 50, 9).unwrap();
    assert_eq!(&a.trajectories().unwrap()[..50], c.trajectories().unwrap());
    let other = sample_trajectories(&inst.truth, &Policy::Uniform, 200, 10).unwrap();
    assert_ne!(a, other);
}

#[test]
fn all_r_fraction_at_h20() {
    let inst = build_prop2(20).unwrap();
    let data = sample_trajectories(&inst.truth, &Policy::Uniform, 1000, 7).unwrap();
    data.check_consistency(&inst.truth).unwrap();
    let hits = data
        .trajectories()
        .unwrap()
        .iter()
        .filter(|t| t.actions().all(|a| a == 1))
        .count();
    assert_eq!(hits, 0);
}

#[test]
fn jsonl_round_trip_and_errors() {
    let inst = build_prop1().unwrap();
    let data = sample_trajectories(&inst.truth, &Policy::Uniform, 10, 1).unwrap();
    let mut buf = Vec::new();
    data.write_jsonl(&mut buf).unwrap();
    let back = Dataset::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, data);

    let text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{not json";
    let broken = lines.join("\n");
    match Dataset::read_jsonl(broken.as_bytes()) {
        Err(Error::Schema(msg)) => assert!(msg.starts_with("line 4"), "{msg}"),
        other => panic!("expected schema error, got {other:?}"),
    }
    let truncated = text.lines().take(5).collect::<Vec<_>>().join("\n");
    assert!(matches!(Dataset::read_jsonl(truncated.as_bytes()), Err(Error::Schema(_))));
}

#[test]
fn empirical_occupancy_of_one_trajectory_is_point_masses() {
    let inst = build_prop1().unwrap();
    let data = sample_trajectories(&inst.truth, &Policy::Uniform, 1, 3).unwrap();
    let occ = empirical_occupancy(&data).unwrap();
    let t = &data.trajectories().unwrap()[0];
    for (h, step) in t.steps.iter().enumerate() {
        assert_eq!(occ.get(h, &step.state, step.action), 1.0);
    }
    let empty = sample_trajectories(&inst.truth, &Policy::Uniform, 0, 3).unwrap();
    assert!(matches!(empirical_occupancy(&empty), Err(Error::EmptyDataset)));
}
