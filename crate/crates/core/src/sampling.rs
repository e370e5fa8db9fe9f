//! Seeded datasets: i.i.d. transition tuples from a state-action distribution
//! (discounted) or i.i.d. trajectories from a behaviour policy (episodic).

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp_core::{Mdp, Occupancy, Policy};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub layer: usize,
    pub state: String,
    pub action: usize,
    pub reward: f64,
    pub next: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: String,
    pub action: usize,
    pub reward: f64,
}

/// `s_1, a_1, r_1, …, s_H, a_H, r_H` plus the terminal state `s_{H+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub terminal: String,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.action)
    }

    /// The `(s_h, a_h, r_h, s_{h+1})` transitions in layer order.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, &str, usize, f64, &str)> + '_ {
        self.steps.iter().enumerate().map(move |(h, st)| {
            let next = self
                .steps
                .get(h + 1)
                .map_or(self.terminal.as_str(), |n| n.state.as_str());
            (h, st.state.as_str(), st.action, st.reward, next)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Tuples,
    Trajectories,
}

/// Provenance and shape; the first line of a JSONL dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub kind: DatasetKind,
    pub seed: u64,
    pub mdp: String,
    pub policy: String,
    pub count: usize,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Tuples(Vec<Transition>),
    Trajectories(Vec<Trajectory>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Records,
}

impl Dataset {
    pub fn len(&self) -> usize {
        match &self.records {
            Records::Tuples(t) => t.len(),
            Records::Trajectories(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn trajectories(&self) -> Result<&[Trajectory]> {
        match &self.records {
            Records::Trajectories(t) => Ok(t),
            Records::Tuples(_) => Err(Error::KindMismatch {
                expected: "a trajectory dataset from an episodic",
            }),
        }
    }

    /// Transitions grouped by independent sample: one per tuple, `H` per
    /// trajectory.
    pub fn units(&self) -> Vec<Vec<Transition>> {
        match &self.records {
            Records::Tuples(t) => t.iter().map(|x| vec![x.clone()]).collect(),
            Records::Trajectories(ts) => ts
                .iter()
                .map(|t| {
                    t.transitions()
                        .map(|(layer, s, a, r, n)| Transition {
                            layer,
                            state: s.to_string(),
                            action: a,
                            reward: r,
                            next: n.to_string(),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Checks that every record could have been produced by `m`: rewards
    /// match and each next state has positive probability.
    pub fn check_consistency(&self, m: &Mdp) -> Result<()> {
        for unit in self.units() {
            for t in unit {
                let r = m.reward(t.layer, &t.state, t.action)?;
                if r != t.reward {
                    return Err(Error::RewardMismatch {
                        layer: t.layer,
                        state: t.state,
                        action: t.action,
                        left: t.reward,
                        right: r,
                    });
                }
                if m.transition(t.layer, &t.state, t.action)?.prob(&t.next) <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "transition {:?} -> {:?} has zero probability",
                        t.state, t.next
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        writeln!(w)?;
        match &self.records {
            Records::Tuples(ts) => {
                for t in ts {
                    serde_json::to_writer(&mut w, t)?;
                    writeln!(w)?;
                }
            }
            Records::Trajectories(ts) => {
                for t in ts {
                    serde_json::to_writer(&mut w, t)?;
                    writeln!(w)?;
                }
            }
        }
        Ok(())
    }

    /// Parses the JSONL format; errors carry 1-based line numbers.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let header: DatasetHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?)
                .map_err(|e| Error::Schema(format!("line 1: bad header: {e}")))?,
            None => return Err(Error::Schema("line 1: missing header".into())),
        };
        let mut tuples = Vec::new();
        let mut trajectories = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let bad = |e: serde_json::Error| Error::Schema(format!("line {lineno}: {e}"));
            match header.kind {
                DatasetKind::Tuples => tuples.push(serde_json::from_str(&line).map_err(bad)?),
                DatasetKind::Trajectories => {
                    let t: Trajectory = serde_json::from_str(&line).map_err(bad)?;
                    if t.actions().any(|a| a >= header.actions.len()) {
                        return Err(Error::Schema(format!("line {lineno}: action out of range")));
                    }
                    trajectories.push(t)
                }
            }
        }
        let records = match header.kind {
            DatasetKind::Tuples => Records::Tuples(tuples),
            DatasetKind::Trajectories => Records::Trajectories(trajectories),
        };
        let d = Dataset { header, records };
        if d.len() != d.header.count {
            return Err(Error::Schema(format!(
                "header count {} but {} records",
                d.header.count,
                d.len()
            )));
        }
        Ok(d)
    }
}

/// `n` i.i.d. tuples `(s, a) ~ data_dist, r = R(s, a), s' ~ P(·|s, a)`.
pub fn sample_tuples(m: &Mdp, data_dist: &Occupancy, n: usize, seed: u64) -> Result<Dataset> {
    m.require_discounted()?;
    if data_dist.num_actions != m.num_actions() {
        return Err(Error::SpaceMismatch(
            "data distribution action count differs from the MDP's".into(),
        ));
    }
    let entries: Vec<(&str, usize, f64)> = data_dist
        .positive()
        .map(|(_, s, a, w)| (s, a, w))
        .collect();
    let total: f64 = entries.iter().map(|e| e.2).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!(
            "data distribution sums to {total}"
        )));
    }
    if let Some((s, _, _)) = entries.iter().find(|(s, _, _)| !m.contains(0, s)) {
        return Err(Error::UnknownState {
            layer: 0,
            state: s.to_string(),
        });
    }
    let weights: Vec<f64> = entries.iter().map(|e| e.2).collect();
    let tuples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(seed, rng::TUPLES, &[i as u64]);
            let (s, a, _) = entries[rng::sample_index(&weights, rng::unit(&mut g))];
            let next = m.transition(0, s, a)?.sample_with(rng::unit(&mut g)).to_string();
            Ok(Transition {
                layer: 0,
                state: s.to_string(),
                action: a,
                reward: m.reward(0, s, a)?,
                next,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            kind: DatasetKind::Tuples,
            seed,
            mdp: m.name().to_string(),
            policy: "data-distribution".into(),
            count: n,
            actions: m.actions().to_vec(),
        },
        records: Records::Tuples(tuples),
    })
}

/// Trajectory `index` of the stream keyed by `seed`; the batch sampler is
/// exactly this function mapped over `0..n`.
pub fn sample_trajectory(m: &Mdp, pi_d: &Policy, seed: u64, index: u64) -> Result<Trajectory> {
    let horizon = m.require_episodic()?;
    let mut g = rng::stream(seed, rng::TRAJECTORIES, &[index]);
    let mut state = m.initial().to_string();
    let mut steps = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let probs = pi_d.action_probs(h, &state, m.num_actions())?;
        let action = rng::sample_index(&probs, rng::unit(&mut g));
        let reward = m.reward(h, &state, action)?;
        let next = m
            .transition(h, &state, action)?
            .sample_with(rng::unit(&mut g))
            .to_string();
        steps.push(Step {
            state: std::mem::replace(&mut state, next),
            action,
            reward,
        });
    }
    Ok(Trajectory {
        steps,
        terminal: state,
    })
}

pub fn sample_trajectories(m: &Mdp, pi_d: &Policy, n: usize, seed: u64) -> Result<Dataset> {
    m.require_episodic()?;
    let trajectories = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_trajectory(m, pi_d, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            kind: DatasetKind::Trajectories,
            seed,
            mdp: m.name().to_string(),
            policy: pi_d.descriptor(),
            count: n,
            actions: m.actions().to_vec(),
        },
        records: Records::Trajectories(trajectories),
    })
}

/// Empirical state-action frequencies: per layer for trajectories, pooled for
/// tuples.
pub fn empirical_occupancy(d: &Dataset) -> Result<Occupancy> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = d.len() as f64;
    let num_actions = d.header.actions.len();
    let mut occ = match &d.records {
        Records::Tuples(ts) => {
            let mut occ = Occupancy::empty(1, num_actions);
            for t in ts {
                occ.add(0, t.state.clone(), t.action, 1.0)?;
            }
            occ
        }
        Records::Trajectories(ts) => {
            let mut occ = Occupancy::empty(ts[0].horizon(), num_actions);
            for t in ts {
                for (h, st) in t.steps.iter().enumerate() {
                    occ.add(h, st.state.clone(), st.action, 1.0)?;
                }
            }
            occ
        }
    };
    for layer in &mut occ.layers {
        for v in layer.values_mut() {
            for w in v.iter_mut() {
                *w /= n;
            }
        }
    }
    occ.normalized = true;
    Ok(occ)
}
