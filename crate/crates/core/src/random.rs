//! Random small MDPs for property tests and sweeps.

use rand::Rng;

use crate::error::Result;
use crate::mdp_core::{Distribution, Mdp, MdpBuilder, MdpKind, Policy};

/// Random distribution over `support`; each entry is dropped with
/// probability `sparsity` (at least one always survives).
pub fn random_distribution<R: Rng>(rng: &mut R, support: &[String], sparsity: f64) -> Result<Distribution> {
    let keep = rng.gen_range(0..support.len());
    let weights: Vec<f64> = (0..support.len())
        .map(|i| {
            if i != keep && rng.gen::<f64>() < sparsity {
                0.0
            } else {
                rng.gen::<f64>() + 1e-3
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    Distribution::from_pairs(
        support
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(s, w)| (s.clone(), w / total)),
    )
}

fn actions(n: usize) -> Vec<String> {
    (0..n).map(|a| format!("a{a}")).collect()
}

/// Discounted MDP on states `s0..`, rewards uniform in `[0, 1]`.
pub fn random_discounted<R: Rng>(rng: &mut R, num_states: usize, num_actions: usize, gamma: f64) -> Result<Mdp> {
    let states: Vec<String> = (0..num_states).map(|i| format!("s{i}")).collect();
    let mut b = MdpBuilder::new(MdpKind::Discounted { gamma }, actions(num_actions))
        .name("random")
        .layer(states.clone())
        .initial("s0");
    for s in &states {
        for a in 0..num_actions {
            let next = random_distribution(rng, &states, 0.3)?;
            b = b.row(0, s, a, rng.gen(), next);
        }
    }
    b.build()
}

/// Episodic MDP with `width` states per layer (`h{h}s{i}`), the initial
/// state `h0s0`.
pub fn random_episodic<R: Rng>(rng: &mut R, horizon: usize, width: usize, num_actions: usize) -> Result<Mdp> {
    let layers: Vec<Vec<String>> = (0..=horizon)
        .map(|h| (0..width).map(|i| format!("h{h}s{i}")).collect())
        .collect();
    let mut b = MdpBuilder::new(MdpKind::Episodic { horizon }, actions(num_actions))
        .name("random")
        .initial("h0s0");
    for l in &layers {
        b = b.layer(l.clone());
    }
    for h in 0..horizon {
        for s in &layers[h] {
            for a in 0..num_actions {
                let next = random_distribution(rng, &layers[h + 1], 0.3)?;
                b = b.row(h, s, a, rng.gen(), next);
            }
        }
    }
    b.build()
}

/// Episodic MDP whose rewards depend on the state only through one of
/// `types` randomly assigned state types, so that non-trivial
/// reward-preserving partitions exist.
pub fn random_episodic_typed<R: Rng>(
    rng: &mut R,
    horizon: usize,
    width: usize,
    num_actions: usize,
    types: usize,
) -> Result<Mdp> {
    let table: Vec<Vec<f64>> = (0..types).map(|_| (0..num_actions).map(|_| rng.gen()).collect()).collect();
    let layers: Vec<Vec<String>> = (0..=horizon)
        .map(|h| (0..width).map(|i| format!("h{h}s{i}")).collect())
        .collect();
    let mut b = MdpBuilder::new(MdpKind::Episodic { horizon }, actions(num_actions))
        .name("random-typed")
        .initial("h0s0");
    for l in &layers {
        b = b.layer(l.clone());
    }
    for h in 0..horizon {
        for s in &layers[h] {
            let t = rng.gen_range(0..types);
            for (a, &r) in table[t].iter().enumerate() {
                let next = random_distribution(rng, &layers[h + 1], 0.3)?;
                b = b.row(h, s, a, r, next);
            }
        }
    }
    b.build()
}

/// Copy of `m` with freshly drawn kernels and the same rewards.
pub fn perturb_kernels<R: Rng>(rng: &mut R, m: &Mdp) -> Result<Mdp> {
    let space = m.state_space()?;
    let mut b = MdpBuilder::new(m.kind(), m.actions().to_vec())
        .name(format!("{}/perturbed", m.name()))
        .initial(m.initial())
        .rmax(m.rmax());
    for l in space.layers() {
        b = b.layer(l.clone());
    }
    for h in m.decision_layers() {
        let targets = space.layer(m.next_layer(h));
        for s in space.layer(h) {
            for a in 0..m.num_actions() {
                let next = random_distribution(rng, targets, 0.3)?;
                b = b.row(h, s, a, m.reward(h, s, a)?, next);
            }
        }
    }
    b.build()
}

/// Tabular policy with random action probabilities at every state.
pub fn random_policy<R: Rng>(rng: &mut R, m: &Mdp) -> Result<Policy> {
    let space = m.state_space()?;
    let mut entries = Vec::new();
    for h in m.decision_layers() {
        for s in space.layer(h) {
            let w: Vec<f64> = (0..m.num_actions()).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let t: f64 = w.iter().sum();
            entries.push((h, s.clone(), w.iter().map(|x| x / t).collect()));
        }
    }
    Ok(Policy::tabular(entries))
}

/// Every deterministic policy over `m`'s full state space, in lexicographic
/// order of action choices.
pub fn all_deterministic_policies(m: &Mdp) -> Result<Vec<Policy>> {
    let space = m.state_space()?;
    let slots: Vec<(usize, String)> = m
        .decision_layers()
        .flat_map(|h| space.layer(h).iter().map(move |s| (h, s.clone())))
        .collect();
    let n = m.num_actions();
    let count = n.checked_pow(slots.len() as u32).filter(|&c| c <= 1 << 20).ok_or_else(|| {
        crate::error::Error::TooLarge {
            what: "deterministic policy set",
            size: usize::MAX,
            limit: 1 << 20,
        }
    })?;
    Ok((0..count)
        .map(|mut code| {
            Policy::deterministic(slots.iter().map(|(h, s)| {
                let a = code % n;
                code /= n;
                (*h, s.clone(), a)
            }))
        })
        .collect())
}
