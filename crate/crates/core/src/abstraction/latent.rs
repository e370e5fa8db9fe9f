use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::encoder::Encoder;
use crate::error::{Error, Result};
use crate::losses::{expected_cross_entropy, nll_report, LossReport};
use crate::mdp_core::{Distribution, Mdp, MdpBuilder, MdpKind, Occupancy, Policy};
use crate::sampling::Dataset;

/// Reward and kernel equality tolerance for bisimulation and admissibility.
pub const BISIM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub reward: f64,
    pub next: Distribution,
}

/// An encoder together with latent dynamics and rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentModel {
    pub encoder: Encoder,
    pub kind: MdpKind,
    pub actions: Vec<String>,
    pub rmax: f64,
    /// `φ(s_init)`.
    pub initial: String,
    /// `[layer] latent → per-action row`, decision layers only.
    pub rows: Vec<BTreeMap<String, Vec<LatentRow>>>,
    /// `(layer, latent, action)` cells without data that fell back to uniform dynamics.
    #[serde(default)]
    pub fallback_cells: Vec<(usize, String, usize)>,
}

impl LatentModel {
    pub fn row(&self, layer: usize, latent: &str, action: usize) -> Result<&LatentRow> {
        self.rows
            .get(layer)
            .and_then(|m| m.get(latent))
            .and_then(|v| v.get(action))
            .ok_or_else(|| Error::UnknownState {
                layer,
                state: latent.to_string(),
            })
    }

    /// The latent MDP over `X`, for planning and policy evaluation.
    pub fn to_mdp(&self) -> Result<Mdp> {
        let mut b = MdpBuilder::new(self.kind, self.actions.clone()).name("latent");
        for h in 0..self.encoder.num_layers() {
            b = b.layer(self.encoder.latents(h));
        }
        for (h, layer) in self.rows.iter().enumerate() {
            for (x, rows) in layer {
                for (a, r) in rows.iter().enumerate() {
                    b = b.row(h, x, a, r.reward, r.next.clone());
                }
            }
        }
        b.initial(self.initial.clone()).rmax(self.rmax).build()
    }

    pub fn is_degenerate(&self) -> bool {
        (0..self.encoder.num_layers()).all(|h| self.encoder.num_latents(h) <= 1)
    }
}

fn next_layer(truth: &Mdp, layer: usize) -> usize {
    truth.next_layer(layer)
}

/// `P_φ(x'|s, a) = Σ_{s': φ(s') = x'} P*(s'|s, a)`, support sorted by latent.
pub fn induced_abstract_kernel(truth: &Mdp, phi: &Encoder, layer: usize, state: &str, action: usize) -> Result<Distribution> {
    let nh = next_layer(truth, layer);
    let pushed = truth
        .transition(layer, state, action)?
        .pushforward(|s| phi.encode(nh, s).map(str::to_string))?;
    Ok(pushed.sorted())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessKind {
    Reward,
    Kernel,
}

/// Two states sharing a latent but disagreeing on `action`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub layer: usize,
    pub first: String,
    pub second: String,
    pub action: usize,
    pub kind: WitnessKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BisimCheck {
    /// The encoder is a bisimulation; carries the induced abstract model.
    Bisimulation(LatentModel),
    Violation(Witness),
}

impl BisimCheck {
    pub fn is_bisimulation(&self) -> bool {
        matches!(self, BisimCheck::Bisimulation(_))
    }
}

/// Checks that rewards and pushed-forward kernels depend on the state only
/// through `φ`. Each latent's first member (in state-space order) is the
/// reference its other members are compared against.
pub fn bisimulation_check(truth: &Mdp, phi: &Encoder) -> Result<BisimCheck> {
    let space = truth.state_space()?;
    phi.check_total(&space)?;
    let mut rows = vec![BTreeMap::new(); truth.decision_layers().len()];
    for h in truth.decision_layers() {
        let mut reps: BTreeMap<&str, (&str, Vec<LatentRow>)> = BTreeMap::new();
        for s in space.layer(h) {
            let x = phi.encode(h, s)?;
            let own = (0..truth.num_actions())
                .map(|a| {
                    Ok(LatentRow {
                        reward: truth.reward(h, s, a)?,
                        next: induced_abstract_kernel(truth, phi, h, s, a)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            match reps.get(x) {
                None => {
                    reps.insert(x, (s, own));
                }
                Some((rep, rep_rows)) => {
                    for (a, (mine, theirs)) in own.iter().zip(rep_rows).enumerate() {
                        let kind = if (mine.reward - theirs.reward).abs() > BISIM_TOLERANCE {
                            Some(WitnessKind::Reward)
                        } else if !mine.next.approx_eq(&theirs.next, BISIM_TOLERANCE) {
                            Some(WitnessKind::Kernel)
                        } else {
                            None
                        };
                        if let Some(kind) = kind {
                            return Ok(BisimCheck::Violation(Witness {
                                layer: h,
                                first: rep.to_string(),
                                second: s.clone(),
                                action: a,
                                kind,
                            }));
                        }
                    }
                }
            }
        }
        rows[h] = reps
            .into_iter()
            .map(|(x, (_, r))| (x.to_string(), r))
            .collect();
    }
    Ok(BisimCheck::Bisimulation(LatentModel {
        encoder: phi.clone(),
        kind: truth.kind(),
        actions: truth.actions().to_vec(),
        rmax: truth.rmax(),
        initial: phi.encode(0, truth.initial())?.to_string(),
        rows,
        fallback_cells: Vec::new(),
    }))
}

fn check_lm_actions(lm: &LatentModel, actions: &[String]) -> Result<()> {
    if lm.actions != actions {
        return Err(Error::SpaceMismatch(format!(
            "latent model actions {:?} differ from {actions:?}",
            lm.actions
        )));
    }
    Ok(())
}

/// Empirical `mean −log P_latent(φ(s')|φ(s), a)`.
pub fn latent_mle_loss(lm: &LatentModel, data: &Dataset) -> Result<LossReport> {
    check_lm_actions(lm, &data.header.actions)?;
    let nh = |h: usize| match lm.kind {
        MdpKind::Episodic { .. } => h + 1,
        MdpKind::Discounted { .. } => 0,
    };
    nll_report(data, |t| {
        let x = lm.encoder.encode(t.layer, &t.state)?;
        let x_next = lm.encoder.encode(nh(t.layer), &t.next)?;
        Ok(lm.row(t.layer, x, t.action)?.next.prob(x_next))
    })
}

/// Exact `E_{(s,a)~d}[CE(P_φ(·|s,a) ‖ P_latent(·|φ(s),a))]`; the
/// decomposition is `(E[entropy(P_φ)], E[KL])`, the second being the excess risk.
pub fn expected_latent_mle_loss(lm: &LatentModel, truth: &Mdp, data_dist: &Occupancy) -> Result<LossReport> {
    check_lm_actions(lm, truth.actions())?;
    expected_cross_entropy(data_dist, |h, s, a| {
        let target = induced_abstract_kernel(truth, &lm.encoder, h, s, a)?;
        let x = lm.encoder.encode(h, s)?;
        Ok((target, lm.row(h, x, a)?.next.clone()))
    })
}

/// Population minimiser of the latent MLE loss for a fixed encoder: each
/// `(x, a)` row is the data-weighted mixture of its members' pushed-forward
/// kernels. Cells with no data mass get uniform dynamics and are listed in
/// `fallback_cells`.
pub fn optimal_latent_dynamics(phi: &Encoder, truth: &Mdp, data_dist: &Occupancy) -> Result<LatentModel> {
    let space = truth.state_space()?;
    phi.check_total(&space)?;
    let mut rows = vec![BTreeMap::new(); truth.decision_layers().len()];
    let mut fallback_cells = Vec::new();
    for h in truth.decision_layers() {
        let next_latents = phi.latents(next_layer(truth, h));
        for x in phi.latents(h) {
            let members: Vec<&String> = space
                .layer(h)
                .iter()
                .filter(|s| phi.encode(h, s).map(|y| y == x).unwrap_or(false))
                .collect();
            let mut cell = Vec::with_capacity(truth.num_actions());
            for a in 0..truth.num_actions() {
                let kernels = members
                    .iter()
                    .map(|s| induced_abstract_kernel(truth, phi, h, s, a))
                    .collect::<Result<Vec<_>>>()?;
                let rewards = members
                    .iter()
                    .map(|s| truth.reward(h, s, a))
                    .collect::<Result<Vec<_>>>()?;
                let weights: Vec<f64> = members.iter().map(|s| data_dist.get(h, s, a)).collect();
                let total: f64 = weights.iter().sum();
                let row = match Distribution::mixture(weights.iter().copied().zip(&kernels)) {
                    Some(mix) if total > 0.0 => LatentRow {
                        reward: weights.iter().zip(&rewards).map(|(w, r)| w * r).sum::<f64>() / total,
                        next: mix.sorted(),
                    },
                    _ => {
                        fallback_cells.push((h, x.clone(), a));
                        LatentRow {
                            reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
                            next: Distribution::uniform(next_latents.clone())?,
                        }
                    }
                };
                cell.push(row);
            }
            rows[h].insert(x, cell);
        }
    }
    Ok(LatentModel {
        encoder: phi.clone(),
        kind: truth.kind(),
        actions: truth.actions().to_vec(),
        rmax: truth.rmax(),
        initial: phi.encode(0, truth.initial())?.to_string(),
        rows,
        fallback_cells,
    })
}

/// Maximum-likelihood latent dynamics from a dataset: transition counts of
/// `(φ(s), a) → φ(s')`, rewards averaged per cell. Unvisited cells fall back
/// to uniform dynamics and the mean reward of `reference` over the cell.
pub fn fit_latent_model(phi: &Encoder, reference: &Mdp, data: &Dataset) -> Result<LatentModel> {
    if reference.actions() != data.header.actions.as_slice() {
        return Err(Error::SpaceMismatch("dataset and MDP action sets differ".into()));
    }
    let mut counts: BTreeMap<(usize, String, usize), (f64, f64, BTreeMap<String, f64>)> = BTreeMap::new();
    for unit in data.units() {
        for t in unit {
            let x = phi.encode(t.layer, &t.state)?.to_string();
            let y = phi.encode(next_layer(reference, t.layer), &t.next)?.to_string();
            let e = counts.entry((t.layer, x, t.action)).or_default();
            e.0 += 1.0;
            e.1 += t.reward;
            *e.2.entry(y).or_insert(0.0) += 1.0;
        }
    }
    let space = reference.state_space()?;
    let mut rows = vec![BTreeMap::new(); reference.decision_layers().len()];
    let mut fallback_cells = Vec::new();
    for h in reference.decision_layers() {
        let next_latents = phi.latents(next_layer(reference, h));
        for x in phi.latents(h) {
            let mut cell = Vec::new();
            for a in 0..reference.num_actions() {
                let row = match counts.get(&(h, x.clone(), a)) {
                    Some((n, r, next)) => LatentRow {
                        reward: r / n,
                        next: Distribution::from_pairs(next.iter().map(|(y, c)| (y.clone(), c / n)))?,
                    },
                    None => {
                        fallback_cells.push((h, x.clone(), a));
                        let members: Vec<&String> = space
                            .layer(h)
                            .iter()
                            .filter(|s| phi.encode(h, s).map(|y| y == x).unwrap_or(false))
                            .collect();
                        let mut reward = 0.0;
                        for s in &members {
                            reward += reference.reward(h, s, a)?;
                        }
                        LatentRow {
                            reward: reward / members.len().max(1) as f64,
                            next: Distribution::uniform(next_latents.clone())?,
                        }
                    }
                };
                cell.push(row);
            }
            rows[h].insert(x, cell);
        }
    }
    Ok(LatentModel {
        encoder: phi.clone(),
        kind: reference.kind(),
        actions: reference.actions().to_vec(),
        rmax: reference.rmax(),
        initial: phi.encode(0, reference.initial())?.to_string(),
        rows,
        fallback_cells,
    })
}

/// True when, for every cell and action, the members with positive data
/// mass share one pushed-forward kernel.
pub fn is_kernel_homogeneous(truth: &Mdp, phi: &Encoder, data_dist: &Occupancy) -> Result<bool> {
    let space = truth.state_space()?;
    for h in truth.decision_layers() {
        for a in 0..truth.num_actions() {
            let mut reference: BTreeMap<&str, Distribution> = BTreeMap::new();
            for s in space.layer(h) {
                if data_dist.get(h, s, a) <= 0.0 {
                    continue;
                }
                let x = phi.encode(h, s)?;
                let k = induced_abstract_kernel(truth, phi, h, s, a)?;
                match reference.get(x) {
                    Some(r) if !r.approx_eq(&k, BISIM_TOLERANCE) => return Ok(false),
                    Some(_) => {}
                    None => {
                        reference.insert(x, k);
                    }
                }
            }
        }
    }
    Ok(true)
}

/// The observation-level policy `s ↦ π_latent(φ(s))`.
pub fn lift_policy(phi: &Encoder, latent_pi: &Policy) -> Policy {
    Policy::Lifted {
        encoder: phi.clone(),
        latent: Box::new(latent_pi.clone()),
    }
}
