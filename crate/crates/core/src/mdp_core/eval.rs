//! Exact dynamic programming: validation, policy evaluation, occupancy
//! measures and optimal planning.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::mdp::{Compiled, Mdp, MdpKind, StateSpace, ENUMERATION_LIMIT};
use super::occupancy::Occupancy;
use super::policy::Policy;
use crate::error::{Error, Result};

/// Successive iterates closer than this (sup norm) stop value iteration.
pub const VALUE_TOLERANCE: f64 = 1e-10;
/// Hard cap on value-iteration sweeps.
pub const MAX_ITERATIONS: usize = 1_000_000;
/// Discounted occupancy series is cut once the remaining mass drops below this.
pub const OCCUPANCY_TAIL: f64 = 1e-12;
/// Tie tolerance for greedy action selection.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub layer: usize,
    pub state: String,
    pub action: Option<String>,
    pub message: String,
}

/// Lists every broken MDP invariant; empty iff the MDP is valid.
pub fn validate(m: &Mdp) -> Vec<Violation> {
    let mut out = Vec::new();
    let global = |message: String| Violation {
        layer: 0,
        state: m.initial().to_string(),
        action: None,
        message,
    };
    if !(m.rmax() > 0.0 && m.rmax().is_finite()) {
        out.push(global(format!("rmax {} is not a positive real", m.rmax())));
    }
    match m.kind() {
        MdpKind::Discounted { gamma } if !(0.0..1.0).contains(&gamma) => {
            out.push(global(format!("gamma {gamma} not in [0,1)")));
        }
        MdpKind::Episodic { horizon: 0 } => out.push(global("horizon must be positive".into())),
        _ => {}
    }
    if !m.contains(0, m.initial()) {
        out.push(global("initial state is not in layer 0".into()));
        return out;
    }
    let space = match m.state_space() {
        Ok(s) => s,
        Err(e) => {
            out.push(global(format!("cannot enumerate states: {e}")));
            return out;
        }
    };
    for h in m.decision_layers() {
        let nh = m.next_layer(h);
        for s in space.layer(h) {
            for a in 0..m.num_actions() {
                let mut report = |message: String| {
                    out.push(Violation {
                        layer: h,
                        state: s.clone(),
                        action: Some(m.actions()[a].clone()),
                        message,
                    })
                };
                let reward = m.reward(h, s, a);
                let first_reward = reward.as_ref().ok().copied();
                match reward {
                    Ok(r) if !(r.is_finite() && (0.0..=m.rmax()).contains(&r)) => {
                        report(format!("reward {r} outside [0, {}]", m.rmax()))
                    }
                    Ok(_) => {}
                    Err(e) => report(format!("reward query failed: {e}")),
                }
                let row = match m.transition(h, s, a) {
                    Ok(row) => row.into_owned(),
                    Err(e) => {
                        report(format!("transition query failed: {e}"));
                        continue;
                    }
                };
                if let Some(msg) = row.check() {
                    report(msg);
                }
                for next in row.support() {
                    if !m.contains(nh, next) {
                        report(format!("next state {next:?} is not in layer {nh}"));
                    }
                }
                if m.is_procedural() {
                    let again = m.transition(h, s, a).map(|d| d.into_owned());
                    if again.ok().as_ref() != Some(&row) || m.reward(h, s, a).ok() != first_reward {
                        report("oracle answers differ on repeated queries".into());
                    }
                }
            }
        }
    }
    out
}

/// `V^π` on every state of the MDP's state space.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub space: StateSpace,
    /// `[layer][state index]`; the terminal layer is all zeros.
    pub values: Vec<Vec<f64>>,
    /// Sweeps used (discounted) or layers swept (episodic).
    pub iterations: usize,
}

impl ValueFunction {
    pub fn get(&self, layer: usize, state: &str) -> Option<f64> {
        self.space
            .index_of(layer, state)
            .map(|i| self.values[layer][i])
    }

    /// `(state, value)` pairs of one layer in space order.
    pub fn layer(&self, layer: usize) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.space
            .layer(layer)
            .iter()
            .map(String::as_str)
            .zip(self.values[layer].iter().copied())
    }
}

fn policy_table(m: &Mdp, c: &Compiled, pi: &Policy) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut out = vec![Vec::new(); c.space.num_layers()];
    for h in m.decision_layers() {
        out[h] = c
            .space
            .layer(h)
            .iter()
            .map(|s| pi.action_probs(h, s, m.num_actions()))
            .collect::<Result<_>>()?;
    }
    Ok(out)
}

fn backup(row: &[(usize, f64)], values: &[f64]) -> f64 {
    row.iter().map(|&(j, p)| p * values[j]).sum()
}

pub fn value_function(m: &Mdp, pi: &Policy) -> Result<ValueFunction> {
    let c = m.compile()?;
    let probs = policy_table(m, &c, pi)?;
    let mut values: Vec<Vec<f64>> = c
        .space
        .layers()
        .iter()
        .map(|l| vec![0.0; l.len()])
        .collect();
    match m.kind() {
        MdpKind::Episodic { horizon } => {
            for h in (0..horizon).rev() {
                let (cur, rest) = values.split_at_mut(h + 1);
                let next = &rest[0];
                for (i, v) in cur[h].iter_mut().enumerate() {
                    *v = probs[h][i]
                        .iter()
                        .enumerate()
                        .map(|(a, &pa)| pa * (c.reward[h][i][a] + backup(&c.next[h][i][a], next)))
                        .sum();
                }
            }
            Ok(ValueFunction {
                space: c.space,
                values,
                iterations: horizon,
            })
        }
        MdpKind::Discounted { gamma } => {
            for it in 1..=MAX_ITERATIONS {
                let old = &values[0];
                let new: Vec<f64> = (0..old.len())
                    .map(|i| {
                        probs[0][i]
                            .iter()
                            .enumerate()
                            .map(|(a, &pa)| {
                                pa * (c.reward[0][i][a] + gamma * backup(&c.next[0][i][a], old))
                            })
                            .sum()
                    })
                    .collect();
                let diff = sup_diff(&new, old);
                values[0] = new;
                if diff < VALUE_TOLERANCE {
                    return Ok(ValueFunction {
                        space: c.space,
                        values,
                        iterations: it,
                    });
                }
            }
            Err(Error::NotConverged {
                iterations: MAX_ITERATIONS,
            })
        }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `J(π)`: the value at the initial state.
///
/// Episodic MDPs whose state space is too large to enumerate are evaluated by
/// forward propagation over the states `π` actually reaches.
pub fn expected_return(m: &Mdp, pi: &Policy) -> Result<f64> {
    match value_function(m, pi) {
        Ok(v) => Ok(v.get(0, m.initial()).expect("initial state is in layer 0")),
        Err(Error::TooLarge { .. }) if m.is_episodic() => {
            let occ = occupancy(m, pi)?;
            let mut total = 0.0;
            for (h, s, a, w) in occ.positive() {
                total += w * m.reward(h, s, a)?;
            }
            Ok(total)
        }
        Err(e) => Err(e),
    }
}

/// State-action occupancy of `π` from the initial state.
///
/// Episodic: forward propagation over reached states only (works on procedural
/// MDPs with huge state sets), one normalised layer per decision step.
/// Discounted: `Σ_t (1-γ) γ^t Pr(s_t, a_t)` truncated once `γ^t` falls below
/// [`OCCUPANCY_TAIL`]; the dropped mass is reported as `truncation_error`.
pub fn occupancy(m: &Mdp, pi: &Policy) -> Result<Occupancy> {
    let n = m.num_actions();
    match m.kind() {
        MdpKind::Episodic { horizon } => {
            let mut occ = Occupancy::empty(horizon, n);
            let mut mass: IndexMap<String, f64> = IndexMap::new();
            mass.insert(m.initial().to_string(), 1.0);
            for h in 0..horizon {
                let mut next: IndexMap<String, f64> = IndexMap::new();
                for (s, &w) in &mass {
                    let probs = pi.action_probs(h, s, n)?;
                    for (a, &pa) in probs.iter().enumerate() {
                        occ.add(h, s.clone(), a, w * pa)?;
                        if pa == 0.0 {
                            continue;
                        }
                        for (ns, p) in m.transition(h, s, a)?.positive() {
                            *next.entry(ns.to_string()).or_insert(0.0) += w * pa * p;
                        }
                    }
                }
                if next.len() > ENUMERATION_LIMIT {
                    return Err(Error::TooLarge {
                        what: "occupancy support",
                        size: next.len(),
                        limit: ENUMERATION_LIMIT,
                    });
                }
                mass = next;
            }
            occ.normalized = true;
            Ok(occ)
        }
        MdpKind::Discounted { gamma } => {
            let c = m.compile()?;
            let probs = policy_table(m, &c, pi)?;
            let states = c.space.layer(0);
            let mut dist = vec![0.0; states.len()];
            dist[c.space.index_of(0, m.initial()).expect("initial state is in layer 0")] = 1.0;
            let mut acc = vec![vec![0.0; n]; states.len()];
            let mut discount = 1.0;
            let mut steps = 0;
            while discount >= OCCUPANCY_TAIL {
                if steps == MAX_ITERATIONS {
                    return Err(Error::NotConverged {
                        iterations: MAX_ITERATIONS,
                    });
                }
                let mut next = vec![0.0; states.len()];
                for (i, &w) in dist.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (a, &pa) in probs[0][i].iter().enumerate() {
                        let wa = w * pa;
                        acc[i][a] += (1.0 - gamma) * discount * wa;
                        for &(j, p) in &c.next[0][i][a] {
                            next[j] += wa * p;
                        }
                    }
                }
                dist = next;
                discount *= gamma;
                steps += 1;
            }
            let mut occ = Occupancy::empty(1, n);
            for (i, s) in states.iter().enumerate() {
                if dist_has_mass(&acc[i]) {
                    occ.layers[0].insert(s.clone(), acc[i].clone());
                }
            }
            occ.normalized = true;
            occ.truncation_error = discount;
            Ok(occ)
        }
    }
}

fn dist_has_mass(v: &[f64]) -> bool {
    v.iter().any(|&w| w > 0.0)
}

/// Optimal deterministic policy over the full state space. Ties go to the
/// lowest action index.
pub fn plan_optimal(m: &Mdp) -> Result<Policy> {
    let c = m.compile()?;
    let n = m.num_actions();
    let mut values: Vec<Vec<f64>> = c
        .space
        .layers()
        .iter()
        .map(|l| vec![0.0; l.len()])
        .collect();
    let gamma = m.gamma().unwrap_or(1.0);
    let q = |h: usize, i: usize, a: usize, next: &[f64]| {
        c.reward[h][i][a] + gamma * backup(&c.next[h][i][a], next)
    };
    match m.kind() {
        MdpKind::Episodic { horizon } => {
            for h in (0..horizon).rev() {
                let (cur, rest) = values.split_at_mut(h + 1);
                for i in 0..cur[h].len() {
                    cur[h][i] = (0..n).map(|a| q(h, i, a, &rest[0])).fold(f64::MIN, f64::max);
                }
            }
        }
        MdpKind::Discounted { .. } => {
            let mut converged = false;
            for _ in 0..MAX_ITERATIONS {
                let old = &values[0];
                let new: Vec<f64> = (0..old.len())
                    .map(|i| (0..n).map(|a| q(0, i, a, old)).fold(f64::MIN, f64::max))
                    .collect();
                let diff = sup_diff(&new, old);
                values[0] = new;
                if diff < VALUE_TOLERANCE {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NotConverged {
                    iterations: MAX_ITERATIONS,
                });
            }
        }
    }
    let mut entries = Vec::new();
    for h in m.decision_layers() {
        let next = &values[m.next_layer(h)];
        for (i, s) in c.space.layer(h).iter().enumerate() {
            let mut best = 0;
            let mut best_q = q(h, i, 0, next);
            for a in 1..n {
                let qa = q(h, i, a, next);
                if qa > best_q + TIE_EPS * best_q.abs().max(1.0) {
                    best = a;
                    best_q = qa;
                }
            }
            entries.push((h, s.clone(), best));
        }
    }
    Ok(Policy::deterministic(entries))
}
