//! Self-certifying counterexample constructions.
//!
//! Every builder recomputes its headline quantities with the exact evaluators
//! and refuses to return an instance whose certificates do not reproduce the
//! closed-form values stored here. Builders use no randomness.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::abstraction::{
    bisimulation_check, expected_latent_mle_loss, lift_policy, optimal_latent_dynamics, search_encoders, Encoder,
};
use crate::diagnostics::{state_action_coverage, trajectory_coverage};
use crate::error::{Error, Result};
use crate::losses::reward_prediction_loss_expected;
use crate::mdp_core::{expected_return, occupancy, Distribution, Mdp, MdpBuilder, MdpKind, Oracle, Policy};

/// Absolute tolerance for certificates, scaled by `max(1, |expected|)`.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-9;
/// Largest horizon accepted by the tree construction.
pub const MAX_PROP2_HORIZON: usize = 60;
/// Largest horizon for which the tree's exact expected loss gap is certified
/// (the joint rollout DP grows as `2^H`).
pub const MAX_PROP2_LOSS_HORIZON: usize = 12;

pub const REGISTRY: [&str; 4] = ["prop1", "prop1-variant", "prop2", "bisim-degenerate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    pub expected: f64,
    pub computed: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Certificate {
    fn new(name: &str, expected: f64, computed: f64) -> Self {
        let tolerance = CERTIFICATE_TOLERANCE * expected.abs().max(1.0);
        Self {
            name: name.to_string(),
            expected,
            computed,
            tolerance,
            passed: (expected - computed).abs() <= tolerance,
        }
    }
}

fn require_all(certs: &[Certificate]) -> Result<()> {
    match certs.iter().find(|c| !c.passed) {
        Some(c) => Err(Error::CertificateMismatch {
            name: c.name.clone(),
            expected: c.expected,
            computed: c.computed,
        }),
        None => Ok(()),
    }
}

/// A true model, a wrong model that the loss prefers or cannot tell apart,
/// the data-collection policy and the policy whose evaluation goes wrong.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub name: String,
    pub truth: Mdp,
    pub wrong: Mdp,
    pub pi_d: Policy,
    pub pi_target: Policy,
    pub certificates: Vec<Certificate>,
}

const LR: [&str; 2] = ["L", "R"];

fn prop1_mdp(name: &str, middle: Distribution) -> Result<Mdp> {
    // Rewards at the middle layer; L is action 0, R is action 1.
    let rewards = [("A", [1.0, 0.0]), ("B", [0.5, 0.5]), ("C", [0.0, 1.0])];
    let mut b = MdpBuilder::episodic(2, LR)
        .name(name)
        .layer(["s_init"])
        .layer(["A", "B", "C"])
        .layer(["end"])
        .initial("s_init")
        .rmax(1.0);
    for a in 0..2 {
        b = b.row(0, "s_init", a, 0.0, middle.clone());
        for (s, r) in &rewards {
            b = b.row(1, s, a, r[a], Distribution::point("end"));
        }
    }
    b.build()
}

fn prop1_target() -> Policy {
    Policy::deterministic([(0, "s_init", 0), (1, "A", 0), (1, "B", 0), (1, "C", 1)])
}

/// The two-step construction where the wrong model (always moving to `B`)
/// has smaller expected reward-prediction loss than the truth, which moves to
/// `A` or `C` with equal probability.
pub fn build_prop1() -> Result<ModelPair> {
    build_prop1_variant(0.0)
}

/// [`build_prop1`] with the truth putting mass `p_b` on `B` (and
/// `(1 − p_b)/2` on each of `A`, `C`). `p_b = 0` is the original.
pub fn build_prop1_variant(p_b: f64) -> Result<ModelPair> {
    if !(0.0..1.0).contains(&p_b) {
        return Err(Error::InvalidParameter(format!("p_b = {p_b} must lie in [0, 1)")));
    }
    let side = (1.0 - p_b) / 2.0;
    let middle = if p_b == 0.0 {
        Distribution::from_pairs([("A", 0.5), ("C", 0.5)])?
    } else {
        Distribution::from_pairs([("A", side), ("B", p_b), ("C", side)])?
    };
    let name = if p_b == 0.0 { "prop1" } else { "prop1-variant" };
    let truth = prop1_mdp(&format!("{name}/truth"), middle)?;
    let wrong = prop1_mdp(&format!("{name}/wrong"), Distribution::point("B"))?;
    let pi_d = Policy::Uniform;
    let pi_target = prop1_target();
    let certificates = vec![
        Certificate::new(
            "loss_truth",
            (1.0 - p_b) / 2.0,
            reward_prediction_loss_expected(&truth, &truth, &pi_d)?.loss,
        ),
        Certificate::new(
            "loss_wrong",
            (1.0 - p_b) / 4.0,
            reward_prediction_loss_expected(&wrong, &truth, &pi_d)?.loss,
        ),
        Certificate::new("return_truth", 1.0 - p_b / 2.0, expected_return(&truth, &pi_target)?),
        Certificate::new("return_wrong", 0.5, expected_return(&wrong, &pi_target)?),
    ];
    require_all(&certificates)?;
    Ok(ModelPair {
        name: name.to_string(),
        truth,
        wrong,
        pi_d,
        pi_target,
        certificates,
    })
}

/// Outcome of searching `p_b ∈ [0, 1)` for the point where the truth starts
/// beating the wrong model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipSearch {
    /// Bracket `[lo, hi]` around the sign change, if any.
    pub bracket: Option<(f64, f64)>,
    /// `loss_truth − loss_wrong` at the grid endpoints.
    pub gap_at_zero: f64,
    pub gap_near_one: f64,
}

/// Scans a uniform grid over `[0, 1 − 1/grid]` for a sign change of
/// `loss_truth − loss_wrong` and bisects the first one found to width `tol`.
pub fn prop1_flip_threshold(grid: usize, tol: f64) -> Result<FlipSearch> {
    if grid < 2 || tol <= 0.0 {
        return Err(Error::InvalidParameter("grid must be ≥ 2 and tol positive".into()));
    }
    let gap = |p: f64| -> Result<f64> {
        let inst = build_prop1_variant(p)?;
        let lt = reward_prediction_loss_expected(&inst.truth, &inst.truth, &inst.pi_d)?.loss;
        let lw = reward_prediction_loss_expected(&inst.wrong, &inst.truth, &inst.pi_d)?.loss;
        Ok(lt - lw)
    };
    let points: Vec<f64> = (0..grid).map(|i| i as f64 / grid as f64).collect();
    let gaps = points.iter().map(|&p| gap(p)).collect::<Result<Vec<_>>>()?;
    let mut bracket = None;
    for i in 1..grid {
        if (gaps[i - 1] > 0.0) != (gaps[i] > 0.0) {
            let (mut lo, mut hi) = (points[i - 1], points[i]);
            let lo_sign = gaps[i - 1] > 0.0;
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if (gap(mid)? > 0.0) == lo_sign {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            bracket = Some((lo, hi));
            break;
        }
    }
    Ok(FlipSearch {
        bracket,
        gap_at_zero: gaps[0],
        gap_near_one: gaps[grid - 1],
    })
}

/// Binary-tree states named `s` followed by the action letters taken so far.
#[derive(Debug, Clone, Copy)]
struct Prop2Oracle {
    horizon: usize,
    /// Wrong model: append the action; truth: collapse onto the all-L chain.
    tree: bool,
}

fn chain_state(h: usize) -> String {
    format!("s{}", "L".repeat(h))
}

impl Oracle for Prop2Oracle {
    fn contains(&self, layer: usize, state: &str) -> bool {
        match state.strip_prefix('s') {
            Some(rest) => {
                layer <= self.horizon && rest.len() == layer && rest.bytes().all(|c| c == b'L' || c == b'R')
            }
            None => false,
        }
    }

    fn transition(&self, layer: usize, state: &str, action: usize) -> Result<Distribution> {
        Ok(Distribution::point(if self.tree {
            format!("{state}{}", LR[action])
        } else {
            chain_state(layer + 1)
        }))
    }

    fn reward(&self, layer: usize, state: &str, action: usize) -> Result<f64> {
        if layer + 1 != self.horizon {
            return Ok(0.0);
        }
        if action == 0 {
            return Ok(1.0);
        }
        let all_r = state[1..].bytes().all(|c| c == b'R');
        Ok(if self.tree && all_r { 100.0 } else { 0.0 })
    }
}

pub fn prop2_truth(horizon: usize) -> Result<Mdp> {
    check_prop2_horizon(horizon)?;
    Ok(prop2_mdp(horizon, false))
}

pub fn prop2_wrong(horizon: usize) -> Result<Mdp> {
    check_prop2_horizon(horizon)?;
    Ok(prop2_mdp(horizon, true))
}

fn check_prop2_horizon(horizon: usize) -> Result<()> {
    if !(2..=MAX_PROP2_HORIZON).contains(&horizon) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} outside 2..={MAX_PROP2_HORIZON}"
        )));
    }
    Ok(())
}

fn prop2_mdp(horizon: usize, tree: bool) -> Mdp {
    let (name, rmax) = if tree { ("prop2/wrong", 100.0) } else { ("prop2/truth", 1.0) };
    Mdp::procedural(
        name,
        MdpKind::Episodic { horizon },
        LR.iter().map(|s| s.to_string()).collect(),
        "s",
        rmax,
        Arc::new(Prop2Oracle { horizon, tree }),
    )
}

/// `2^{−H}`: probability that uniform data takes the all-R action sequence,
/// the only event on which the two models' reward predictions differ.
pub fn distinguishing_probability(horizon: usize) -> Result<f64> {
    check_prop2_horizon(horizon)?;
    Ok(0.5f64.powi(horizon as i32))
}

/// Probability that `n` i.i.d. uniform trajectories contain at least one
/// all-R sequence, `1 − (1 − 2^{−H})^n`, evaluated in log space.
pub fn dataset_detection_probability(horizon: usize, n: u64) -> Result<f64> {
    let p = distinguishing_probability(horizon)?;
    if n == 0 {
        return Err(Error::InvalidParameter("dataset size must be positive".into()));
    }
    Ok(-(n as f64 * (-p).ln_1p()).exp_m1())
}

/// The tree/chain pair: under uniform data the truth (a chain) covers every
/// state-action it visits with ratio at most 2, yet the wrong model (a tree
/// with a 100 reward hidden at the end of the all-R branch) agrees with the
/// truth on every reward prediction except along that one branch.
pub fn build_prop2(horizon: usize) -> Result<ModelPair> {
    let truth = prop2_truth(horizon)?;
    let wrong = prop2_wrong(horizon)?;
    let pi_d = Policy::Uniform;
    let pi_target = Policy::Fixed { action: 1 };
    let data = occupancy(&truth, &pi_d)?;

    // Probability of the all-R sequence, multiplied out along the true chain.
    let mut all_r = 1.0;
    for h in 0..horizon {
        all_r *= pi_d.action_probs(h, &chain_state(h), 2)?[1];
    }
    let mut certificates = vec![
        Certificate::new("coverage", 2.0, state_action_coverage(&truth, &pi_target, &data)?.ratio),
        Certificate::new(
            "trajectory_coverage",
            2f64.powi(horizon as i32),
            trajectory_coverage(&truth, &pi_target, &pi_d)?.ratio,
        ),
        Certificate::new("distinguishing_probability", 0.5f64.powi(horizon as i32), all_r),
        Certificate::new("return_wrong", 100.0, expected_return(&wrong, &pi_target)?),
        Certificate::new("return_truth", 0.0, expected_return(&truth, &pi_target)?),
    ];
    if horizon <= MAX_PROP2_LOSS_HORIZON {
        let lt = reward_prediction_loss_expected(&truth, &truth, &pi_d)?.loss;
        let lw = reward_prediction_loss_expected(&wrong, &truth, &pi_d)?.loss;
        certificates.push(Certificate::new("loss_truth", 0.0, lt));
        certificates.push(Certificate::new(
            "loss_gap",
            1e4 * 0.5f64.powi(horizon as i32),
            lw - lt,
        ));
    }
    require_all(&certificates)?;
    Ok(ModelPair {
        name: "prop2".into(),
        truth,
        wrong,
        pi_d,
        pi_target,
        certificates,
    })
}

/// A three-step instance where merging two states with different dynamics
/// lowers the latent MLE loss below that of the bisimulation encoder.
#[derive(Debug, Clone)]
pub struct BisimInstance {
    pub truth: Mdp,
    pub pi_d: Policy,
    pub phi_bisim: Encoder,
    pub phi_degenerate: Encoder,
    /// Latent policy over the degenerate encoder's latents that always plays L.
    pub pi_latent: Policy,
    pub certificates: Vec<Certificate>,
}

/// Expected latent MLE loss (nats, summed over layers) of the separating
/// encoder with its optimal latent dynamics under uniform data.
pub const BISIM_LOSS: f64 = 0.671_656_563_671_420_8;
/// Same for the encoder merging `p1` and `p2` into `m`.
pub const DEGENERATE_LOSS: f64 = 0.562_335_144_618_808_3;

fn bisim_truth() -> Result<Mdp> {
    let mut b = MdpBuilder::episodic(3, LR)
        .name("bisim-degenerate")
        .layer(["s_init"])
        .layer(["p1", "p2"])
        .layer(["g", "b"])
        .layer(["end"])
        .initial("s_init")
        .rmax(1.0);
    b = b
        .row(0, "s_init", 0, 0.0, Distribution::from_pairs([("p1", 0.9), ("p2", 0.1)])?)
        .row(0, "s_init", 1, 0.0, Distribution::from_pairs([("p1", 0.1), ("p2", 0.9)])?)
        .row(1, "p1", 0, 0.0, Distribution::point("g"))
        .row(1, "p1", 1, 0.0, Distribution::point("b"));
    let coin = Distribution::from_pairs([("g", 0.5), ("b", 0.5)])?;
    for a in 0..2 {
        b = b
            .row(1, "p2", a, 0.0, coin.clone())
            .row(2, "g", a, 1.0, Distribution::point("end"))
            .row(2, "b", a, 0.0, Distribution::point("end"));
    }
    b.build()
}

fn layered_encoder(layers: &[&[(&str, &str)]]) -> Encoder {
    Encoder::new(
        layers
            .iter()
            .map(|l| l.iter().map(|(s, x)| (s.to_string(), x.to_string())).collect::<BTreeMap<_, _>>())
            .collect(),
    )
}

pub fn build_bisim_degenerate() -> Result<BisimInstance> {
    let truth = bisim_truth()?;
    let pi_d = Policy::Uniform;
    let phi_bisim = Encoder::identity(&truth.state_space()?);
    let phi_degenerate = layered_encoder(&[
        &[("s_init", "s_init")],
        &[("p1", "m"), ("p2", "m")],
        &[("g", "g"), ("b", "b")],
        &[("end", "end")],
    ]);
    let pi_latent = Policy::Fixed { action: 0 };
    let data = occupancy(&truth, &pi_d)?;

    let lm_bisim = optimal_latent_dynamics(&phi_bisim, &truth, &data)?;
    let lm_degenerate = optimal_latent_dynamics(&phi_degenerate, &truth, &data)?;
    let lifted = lift_policy(&phi_degenerate, &pi_latent);
    let degenerate_id = phi_degenerate.canonical_id(&truth.state_space()?)?;
    let ranking = search_encoders(&truth, &data, 5)?;
    let top_is_degenerate = ranking.first().is_some_and(|s| s.id == degenerate_id);
    let certificates = vec![
        Certificate::new(
            "latent_loss_bisim",
            BISIM_LOSS,
            expected_latent_mle_loss(&lm_bisim, &truth, &data)?.loss,
        ),
        Certificate::new(
            "latent_loss_degenerate",
            DEGENERATE_LOSS,
            expected_latent_mle_loss(&lm_degenerate, &truth, &data)?.loss,
        ),
        Certificate::new("merged_l_to_g", 0.75, lm_degenerate.row(1, "m", 0)?.next.prob("g")),
        Certificate::new("return_truth", 0.95, expected_return(&truth, &lifted)?),
        Certificate::new(
            "return_degenerate",
            0.75,
            expected_return(&lm_degenerate.to_mdp()?, &pi_latent)?,
        ),
        Certificate::new(
            "return_bisim",
            0.95,
            expected_return(&lm_bisim.to_mdp()?, &pi_latent)?,
        ),
        Certificate::new(
            "bisim_encoder_is_bisimulation",
            1.0,
            f64::from(u8::from(bisimulation_check(&truth, &phi_bisim)?.is_bisimulation())),
        ),
        Certificate::new(
            "degenerate_encoder_is_bisimulation",
            0.0,
            f64::from(u8::from(bisimulation_check(&truth, &phi_degenerate)?.is_bisimulation())),
        ),
        Certificate::new("search_ranks_degenerate_first", 1.0, f64::from(u8::from(top_is_degenerate))),
    ];
    require_all(&certificates)?;
    Ok(BisimInstance {
        truth,
        pi_d,
        phi_bisim,
        phi_degenerate,
        pi_latent,
        certificates,
    })
}
