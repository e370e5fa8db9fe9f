//! Analytical instruments: simulation-lemma terms, coverage ratios and the
//! Lipschitz smoothness check behind the L2 model loss.
//!
//! Infinite ratios are ordinary values here: every report that can blow up
//! carries an `infinite` flag next to the number.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Embedding;
use crate::mdp_core::{occupancy, value_function, DeterministicModel, Mdp, MdpKind, Occupancy, Policy};

/// Tolerance for the shared-reward precondition of the simulation lemma.
pub const REWARD_TOLERANCE: f64 = 1e-12;

/// Terms of the simulation lemma for a model/truth pair sharing rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub j_truth: f64,
    pub j_model: f64,
    /// `|J_truth − J_model|` by exact dynamic programming.
    pub lhs: f64,
    /// `J_model − J_truth` reassembled from one-step kernel errors weighted by
    /// the truth's occupancy and the model's value function.
    pub decomposition_signed: f64,
    pub decomposition_abs: f64,
    /// `V_max/(1−γ)·E‖P − P*‖₁` (episodic: `V_max·Σ_h E_h‖P − P*‖₁`).
    pub l1_bound: f64,
    /// `γ/(1−γ)·V_max·E[TV]` (episodic: `V_max·Σ_h E_h[TV]`), never larger
    /// than `l1_bound`.
    pub tv_bound: f64,
}

fn check_shared_rewards(model: &Mdp, truth: &Mdp) -> Result<()> {
    if model.kind() != truth.kind() || model.actions() != truth.actions() {
        return Err(Error::SpaceMismatch("model and truth differ in kind or actions".into()));
    }
    let space = truth.state_space()?;
    for h in truth.decision_layers() {
        for s in space.layer(h) {
            for a in 0..truth.num_actions() {
                let (left, right) = (model.reward(h, s, a)?, truth.reward(h, s, a)?);
                if (left - right).abs() > REWARD_TOLERANCE {
                    return Err(Error::RewardMismatch {
                        layer: h,
                        state: s.clone(),
                        action: a,
                        left,
                        right,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Exact simulation-lemma decomposition of `J_model(π) − J_truth(π)`.
pub fn simulation_lemma_terms(model: &Mdp, truth: &Mdp, pi: &Policy) -> Result<SimulationReport> {
    check_shared_rewards(model, truth)?;
    let v = value_function(model, pi)?;
    let d = occupancy(truth, pi)?;
    // Rewards agree on the truth's support only; the model may still be
    // worth more off it, so bound V_M by the larger range.
    let vmax = truth.vmax().max(model.vmax());
    // Per-layer expectations of ⟨P − P*, V_next⟩, ‖P − P*‖₁ and TV.
    let mut inner = 0.0;
    let mut l1 = 0.0;
    for (h, s, a, w) in d.positive() {
        let nh = model.next_layer(h);
        let p = model.transition(h, s, a)?;
        let p_star = truth.transition(h, s, a)?;
        let mut dot = 0.0;
        let mut dist = 0.0;
        for (next, x, y) in p.aligned(&p_star) {
            let value = v.get(nh, &next).ok_or_else(|| Error::UnknownState {
                layer: nh,
                state: next.clone(),
            })?;
            dot += (x - y) * value;
            dist += (x - y).abs();
        }
        inner += w * dot;
        l1 += w * dist;
    }
    let j_truth = crate::mdp_core::expected_return(truth, pi)?;
    let j_model = v.get(0, model.initial()).expect("initial state is in layer 0");
    let (decomposition_signed, l1_bound, tv_bound) = match truth.kind() {
        MdpKind::Discounted { gamma } => (
            gamma / (1.0 - gamma) * inner,
            vmax / (1.0 - gamma) * l1,
            gamma / (1.0 - gamma) * vmax * 0.5 * l1,
        ),
        MdpKind::Episodic { .. } => (inner, vmax * l1, vmax * 0.5 * l1),
    };
    Ok(SimulationReport {
        j_truth,
        j_model,
        lhs: (j_truth - j_model).abs(),
        decomposition_signed,
        decomposition_abs: decomposition_signed.abs(),
        l1_bound,
        tv_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub layer: usize,
    pub state: String,
    pub action: usize,
}

/// A supremum ratio; `ratio` is `+inf` exactly when `infinite` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub ratio: f64,
    pub infinite: bool,
    /// Where the supremum is attained (first in layer, state, action order).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub argmax: Option<Location>,
}

/// `max_{(s,a): target > 0} target(s,a) / data(s,a)`.
pub fn coverage_ratio(target: &Occupancy, data: &Occupancy) -> CoverageReport {
    let mut best = CoverageReport {
        ratio: 0.0,
        infinite: false,
        argmax: None,
    };
    for (h, s, a, w) in target.positive() {
        let dd = data.get(h, s, a);
        let r = if dd > 0.0 { w / dd } else { f64::INFINITY };
        if best.argmax.is_none() || r > best.ratio {
            best.ratio = r;
            best.infinite = r.is_infinite();
            best.argmax = Some(Location {
                layer: h,
                state: s.to_string(),
                action: a,
            });
        }
    }
    best
}

/// State-action coverage `‖d^π_{M*} / d^D‖_∞`.
pub fn state_action_coverage(truth: &Mdp, pi: &Policy, data_occ: &Occupancy) -> Result<CoverageReport> {
    Ok(coverage_ratio(&occupancy(truth, pi)?, data_occ))
}

/// The reverse-direction variant `‖d^π_M / d^D‖_∞`, with the model's own
/// occupancy in the numerator.
pub fn model_state_action_coverage(model: &Mdp, pi: &Policy, data_occ: &Occupancy) -> Result<CoverageReport> {
    Ok(coverage_ratio(&occupancy(model, pi)?, data_occ))
}

/// Trajectory coverage `max_τ Π_h π(a_h|s_h) / π_D(a_h|s_h)` over trajectories
/// the truth can generate with positive probability under `π`.
pub fn trajectory_coverage(truth: &Mdp, pi: &Policy, pi_d: &Policy) -> Result<CoverageReport> {
    let horizon = truth.require_episodic()?;
    let n = truth.num_actions();
    // Forward: states reachable under π, with each row's step ratios.
    let mut layers: Vec<IndexMap<String, Vec<(f64, Vec<String>)>>> = Vec::with_capacity(horizon);
    let mut frontier = vec![truth.initial().to_string()];
    for h in 0..horizon {
        let mut layer = IndexMap::new();
        let mut next = IndexMap::<String, ()>::new();
        for s in frontier {
            let p = pi.action_probs(h, &s, n)?;
            let q = pi_d.action_probs(h, &s, n)?;
            let mut rows = Vec::new();
            for a in 0..n {
                if p[a] <= 0.0 {
                    continue;
                }
                let ratio = if q[a] > 0.0 { p[a] / q[a] } else { f64::INFINITY };
                let succ: Vec<String> = truth
                    .transition(h, &s, a)?
                    .positive()
                    .map(|(t, _)| t.to_string())
                    .collect();
                for t in &succ {
                    next.insert(t.clone(), ());
                }
                rows.push((ratio, succ));
            }
            layer.insert(s, rows);
        }
        layers.push(layer);
        frontier = next.into_keys().collect();
    }
    // Backward max-product.
    let mut best_next: IndexMap<String, f64> = frontier.into_iter().map(|s| (s, 1.0)).collect();
    for layer in layers.iter().rev() {
        let mut cur = IndexMap::new();
        for (s, rows) in layer {
            let v = rows
                .iter()
                .map(|(ratio, succ)| {
                    let tail = succ.iter().map(|t| best_next[t]).fold(0.0, f64::max);
                    ratio * tail
                })
                .fold(0.0, f64::max);
            cur.insert(s.clone(), v);
        }
        best_next = cur;
    }
    let ratio = best_next[truth.initial()];
    Ok(CoverageReport {
        ratio,
        infinite: ratio.is_infinite(),
        argmax: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub constant: f64,
    pub infinite: bool,
    /// The pair attaining the maximum ratio.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub argmax: Option<(String, String)>,
}

/// `max_{s ≠ s̃} |V(s) − V(s̃)| / ‖emb(s) − emb(s̃)‖`. Coincident embeddings
/// with different values make the constant infinite.
pub fn lipschitz_constant(values: &BTreeMap<String, f64>, emb: &Embedding) -> Result<LipschitzReport> {
    if values.len() < 2 {
        return Err(Error::InvalidParameter(
            "the Lipschitz constant needs at least two states".into(),
        ));
    }
    let entries: Vec<(&String, f64)> = values.iter().map(|(s, v)| (s, *v)).collect();
    let mut best = LipschitzReport {
        constant: 0.0,
        infinite: false,
        argmax: None,
    };
    for (i, (s, vs)) in entries.iter().enumerate() {
        for (t, vt) in &entries[i + 1..] {
            let gap = (vs - vt).abs();
            if gap == 0.0 {
                continue;
            }
            let dist = emb.distance(s, t)?;
            let ratio = if dist > 0.0 { gap / dist } else { f64::INFINITY };
            if ratio > best.constant {
                best = LipschitzReport {
                    constant: ratio,
                    infinite: ratio.is_infinite(),
                    argmax: Some(((*s).clone(), (*t).clone())),
                };
            }
        }
    }
    Ok(best)
}

/// Which states the Lipschitz constant is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzDomain {
    /// Every state of the model, including ones the truth never produces.
    All,
    /// Only states in the truth's state space.
    Legal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessRow {
    pub layer: usize,
    pub state: String,
    pub action: usize,
    pub predicted: String,
    pub actual: String,
    /// `|V_M(f(s,a)) − V_M(f*(s,a))|`.
    pub value_gap: f64,
    /// `‖emb(f(s,a)) − emb(f*(s,a))‖`.
    pub prediction_error: f64,
    /// `L · prediction_error`.
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub domain: LipschitzDomain,
    pub lipschitz: LipschitzReport,
    pub rows: Vec<SmoothnessRow>,
    pub violations: usize,
    /// `E_{d^π_{M*}} |V_M(f) − V_M(f*)|`.
    pub weighted_value_gap: f64,
    /// `L · E_{d^π_{M*}} ‖f − f*‖`.
    pub weighted_smoothness_bound: f64,
    /// `V_max · E_{d^π_{M*}} ‖P − P*‖₁` for the point-mass kernels.
    pub weighted_tv_bound: f64,
}

/// Compares value gaps `|V_M(f(s,a)) − V_M(f*(s,a))|` with the smoothness
/// bound `L‖f(s,a) − f*(s,a)‖` at every state-action of the truth, where `L`
/// is the Lipschitz constant of `V_M^π` over `domain`.
pub fn smoothness_gap_report(
    model: &DeterministicModel,
    truth: &DeterministicModel,
    pi: &Policy,
    emb: &Embedding,
    domain: LipschitzDomain,
) -> Result<SmoothnessReport> {
    let (m, t) = (model.as_mdp(), truth.as_mdp());
    check_shared_rewards(m, t)?;
    let v = value_function(m, pi)?;
    let truth_space = t.state_space()?;
    // The constant is the max over layers of the per-layer constant.
    let mut lipschitz = LipschitzReport {
        constant: 0.0,
        infinite: false,
        argmax: None,
    };
    for h in 0..v.space.num_layers() {
        let values: BTreeMap<String, f64> = match domain {
            LipschitzDomain::All => v.layer(h).map(|(s, x)| (s.to_string(), x)).collect(),
            LipschitzDomain::Legal => truth_space
                .layer(h)
                .iter()
                .filter_map(|s| v.get(h, s).map(|x| (s.clone(), x)))
                .collect(),
        };
        if values.len() < 2 {
            continue;
        }
        let l = lipschitz_constant(&values, emb)?;
        if l.constant > lipschitz.constant {
            lipschitz = l;
        }
    }
    let occ = occupancy(t, pi)?;
    let mut rows = Vec::new();
    let (mut weighted_value_gap, mut weighted_error, mut weighted_l1) = (0.0, 0.0, 0.0);
    for h in t.decision_layers() {
        let nh = t.next_layer(h);
        for s in truth_space.layer(h) {
            for a in 0..t.num_actions() {
                let predicted = model.next(h, s, a)?;
                let actual = truth.next(h, s, a)?;
                let value = |x: &str| {
                    v.get(nh, x).ok_or_else(|| Error::UnknownState {
                        layer: nh,
                        state: x.to_string(),
                    })
                };
                let value_gap = (value(&predicted)? - value(&actual)?).abs();
                let prediction_error = emb.distance(&predicted, &actual)?;
                let rhs = if prediction_error == 0.0 {
                    0.0
                } else {
                    lipschitz.constant * prediction_error
                };
                let w = occ.get(h, s, a);
                weighted_value_gap += w * value_gap;
                weighted_error += w * prediction_error;
                if predicted != actual {
                    weighted_l1 += w * 2.0;
                }
                rows.push(SmoothnessRow {
                    layer: h,
                    state: s.clone(),
                    action: a,
                    predicted,
                    actual,
                    value_gap,
                    prediction_error,
                    rhs,
                    slack: rhs - value_gap,
                    holds: value_gap <= rhs + 1e-12,
                });
            }
        }
    }
    Ok(SmoothnessReport {
        domain,
        violations: rows.iter().filter(|r| !r.holds).count(),
        weighted_smoothness_bound: if weighted_error == 0.0 {
            0.0
        } else {
            lipschitz.constant * weighted_error
        },
        weighted_tv_bound: t.vmax() * weighted_l1,
        lipschitz,
        rows,
        weighted_value_gap,
    })
}
