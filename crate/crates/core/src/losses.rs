//! Model-learning losses, each with an empirical (dataset) evaluator and an
//! exact (population) evaluator.
//!
//! Episodic losses are per trajectory: layer contributions are summed, and
//! empirical evaluators average the per-trajectory sums. Tuple datasets
//! average per tuple.

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp_core::{cross_entropy_parts, occupancy, DeterministicModel, Distribution, Mdp, Occupancy, Policy};
use crate::rng;
use crate::sampling::{Dataset, Transition};

/// Joint (true state, rollout state) pairs allowed per layer in the exact
/// reward-prediction evaluator.
pub const JOINT_PAIR_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// Irreducible part: expected entropy of the target distribution.
    pub entropy: f64,
    /// Expected KL from target to prediction (excess risk).
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    /// Monte-Carlo standard error of `loss`; zero for exact evaluators.
    #[serde(rename = "se")]
    pub standard_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Decomposition>,
    pub zero_prob_events: usize,
    pub per_layer: Vec<f64>,
    pub n_effective: usize,
    /// Set when the exact loss is infinite (`loss` is then `+inf`).
    #[serde(default)]
    pub infinite: bool,
}

impl LossReport {
    fn exact(per_layer: Vec<f64>, decomposition: Option<Decomposition>, infinite: bool) -> Self {
        let loss = if infinite {
            f64::INFINITY
        } else {
            per_layer.iter().sum()
        };
        Self {
            loss,
            standard_error: 0.0,
            decomposition,
            zero_prob_events: 0,
            per_layer,
            n_effective: 0,
            infinite,
        }
    }

    /// Mean and standard error over per-unit totals, with per-layer means.
    fn from_units(units: &[Vec<f64>], zero_prob_events: usize) -> Self {
        let n = units.len();
        let layers = units.iter().map(Vec::len).max().unwrap_or(0);
        let totals: Vec<f64> = units.iter().map(|u| u.iter().sum()).collect();
        let (mean, se) = mean_and_se(&totals);
        let per_layer = (0..layers)
            .map(|h| units.iter().map(|u| u.get(h).copied().unwrap_or(0.0)).sum::<f64>() / n as f64)
            .collect();
        Self {
            loss: mean,
            standard_error: se,
            decomposition: None,
            zero_prob_events,
            per_layer,
            n_effective: n,
            infinite: false,
        }
    }
}

pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_actions(candidate: &Mdp, data: &Dataset) -> Result<()> {
    if candidate.actions() != data.header.actions.as_slice() {
        return Err(Error::SpaceMismatch(format!(
            "candidate actions {:?} differ from dataset actions {:?}",
            candidate.actions(),
            data.header.actions
        )));
    }
    Ok(())
}

/// Negative log-likelihood of each transition under a per-transition
/// probability, skipping (and counting) zero-probability events.
pub(crate) fn nll_report<F>(data: &Dataset, mut prob: F) -> Result<LossReport>
where
    F: FnMut(&Transition) -> Result<f64>,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut zero = 0;
    let mut units = Vec::with_capacity(data.len());
    for unit in data.units() {
        let mut per_layer = Vec::with_capacity(unit.len());
        for t in &unit {
            let p = prob(t)?;
            if per_layer.len() <= t.layer {
                per_layer.resize(t.layer + 1, 0.0);
            }
            if p > 0.0 {
                per_layer[t.layer] -= p.ln();
            } else {
                zero += 1;
            }
        }
        units.push(per_layer);
    }
    Ok(LossReport::from_units(&units, zero))
}

/// Empirical MLE loss `mean −log P(s'|s, a)`.
pub fn mle_loss(candidate: &Mdp, data: &Dataset) -> Result<LossReport> {
    check_actions(candidate, data)?;
    nll_report(data, |t| {
        Ok(candidate.transition(t.layer, &t.state, t.action)?.prob(&t.next))
    })
}

/// Sums `weight · (entropy(target), KL(target‖pred))` over the data
/// distribution, per layer.
pub(crate) fn expected_cross_entropy<F>(data_dist: &Occupancy, mut rows: F) -> Result<LossReport>
where
    F: FnMut(usize, &str, usize) -> Result<(Distribution, Distribution)>,
{
    let mut per_layer = vec![0.0; data_dist.num_layers()];
    let mut entropy = 0.0;
    let mut excess = 0.0;
    let mut infinite = false;
    for (h, s, a, w) in data_dist.positive() {
        let (target, pred) = rows(h, s, a)?;
        let (ent, kl) = cross_entropy_parts(&target, &pred);
        entropy += w * ent;
        match kl {
            Some(kl) => {
                excess += w * kl;
                per_layer[h] += w * (ent + kl);
            }
            None => infinite = true,
        }
    }
    let excess = if infinite { f64::INFINITY } else { excess };
    let mut report = LossReport::exact(per_layer, Some(Decomposition { entropy, excess }), infinite);
    if !infinite {
        report.loss = entropy + excess;
    }
    Ok(report)
}

/// Exact `E_{(s,a)~d}[CE(P*(·|s,a) ‖ P(·|s,a))]` split into conditional
/// entropy of the truth and expected KL.
pub fn expected_mle_loss(candidate: &Mdp, truth: &Mdp, data_dist: &Occupancy) -> Result<LossReport> {
    if candidate.actions() != truth.actions() {
        return Err(Error::SpaceMismatch("candidate and truth action sets differ".into()));
    }
    expected_cross_entropy(data_dist, |h, s, a| {
        Ok((
            truth.transition(h, s, a)?.into_owned(),
            candidate.transition(h, s, a)?.into_owned(),
        ))
    })
}

/// Fixed-dimension real vectors for states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl Embedding {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, Vec<f64>)>) -> Result<Self> {
        let vectors: BTreeMap<String, Vec<f64>> =
            entries.into_iter().map(|(s, v)| (s.into(), v)).collect();
        let dim = vectors.values().next().map_or(0, Vec::len);
        if let Some((s, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::InvalidParameter(format!(
                "embedding of {s:?} has dimension {}, expected {dim}",
                v.len()
            )));
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, state: &str) -> Result<&[f64]> {
        self.vectors
            .get(state)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(state.to_string()))
    }

    /// Euclidean distance between two embedded states.
    pub fn distance(&self, a: &str, b: &str) -> Result<f64> {
        let (x, y) = (self.get(a)?, self.get(b)?);
        Ok(x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
    }

    pub fn states(&self) -> impl Iterator<Item = &str> + '_ {
        self.vectors.keys().map(String::as_str)
    }
}

fn norm_loss(dist: f64, squared: bool) -> f64 {
    if squared {
        dist * dist
    } else {
        dist
    }
}

/// Empirical `mean ‖emb(s') − emb(f(s, a))‖`, optionally squared.
pub fn l2_loss(candidate: &DeterministicModel, data: &Dataset, emb: &Embedding, squared: bool) -> Result<LossReport> {
    check_actions(candidate.as_mdp(), data)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let units = data
        .units()
        .iter()
        .map(|unit| {
            let mut per_layer = Vec::new();
            for t in unit {
                let pred = candidate.next(t.layer, &t.state, t.action)?;
                if per_layer.len() <= t.layer {
                    per_layer.resize(t.layer + 1, 0.0);
                }
                per_layer[t.layer] += norm_loss(emb.distance(&t.next, &pred)?, squared);
            }
            Ok(per_layer)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossReport::from_units(&units, 0))
}

/// Exact expectation of [`l2_loss`] under `truth` and `data_dist`.
pub fn expected_l2_loss(
    candidate: &DeterministicModel,
    truth: &Mdp,
    data_dist: &Occupancy,
    emb: &Embedding,
    squared: bool,
) -> Result<LossReport> {
    let mut per_layer = vec![0.0; data_dist.num_layers()];
    for (h, s, a, w) in data_dist.positive() {
        let pred = candidate.next(h, s, a)?;
        for (next, p) in truth.transition(h, s, a)?.positive() {
            per_layer[h] += w * p * norm_loss(emb.distance(next, &pred)?, squared);
        }
    }
    Ok(LossReport::exact(per_layer, None, false))
}

/// Multi-step reward-prediction loss on trajectory data.
///
/// For every trajectory and start layer `h` the candidate is reset to the
/// observed `s_h`, rolled forward open-loop on the data actions `a_h..a_H`
/// with one sampled rollout, and charged `Σ_{h'≥h} (r_{h'} − R(ŝ_{h'}, a_{h'}))²`.
/// `per_layer[h]` is the mean charge of rollouts started at `h`.
pub fn reward_prediction_loss_empirical(candidate: &Mdp, data: &Dataset, seed: u64) -> Result<LossReport> {
    let horizon = candidate.require_episodic()?;
    check_actions(candidate, data)?;
    let trajectories = data.trajectories()?;
    if trajectories.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let units = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            if traj.horizon() != horizon {
                return Err(Error::SpaceMismatch(format!(
                    "trajectory {i} has length {}, candidate horizon is {horizon}",
                    traj.horizon()
                )));
            }
            let mut per_start = vec![0.0; horizon];
            for h in 0..horizon {
                let start = &traj.steps[h].state;
                if !candidate.contains(h, start) {
                    return Err(Error::UnknownState {
                        layer: h,
                        state: start.clone(),
                    });
                }
                let mut g = rng::stream(seed, rng::ROLLOUTS, &[i as u64, h as u64]);
                let mut state = start.clone();
                for (k, step) in traj.steps.iter().enumerate().skip(h) {
                    let predicted = candidate.reward(k, &state, step.action)?;
                    per_start[h] += (step.reward - predicted).powi(2);
                    if k + 1 < horizon {
                        state = candidate
                            .transition(k, &state, step.action)?
                            .sample_with(rng::unit(&mut g))
                            .to_string();
                    }
                }
            }
            Ok(per_start)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossReport::from_units(&units, 0))
}

#[derive(Default)]
struct Interner {
    ids: HashMap<String, u32>,
    names: Vec<String>,
}

impl Interner {
    fn id(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.ids.get(s) {
            return i;
        }
        let i = self.names.len() as u32;
        self.ids.insert(s.to_string(), i);
        self.names.push(s.to_string());
        i
    }

    fn name(&self, i: u32) -> &str {
        &self.names[i as usize]
    }
}

/// Per-layer cache of `(state id, action) → (reward, [(next id, p)])`.
struct RowCache<'a> {
    mdp: &'a Mdp,
    layers: Vec<Interner>,
    rows: Vec<HashMap<(u32, usize), (f64, Vec<(u32, f64)>)>>,
}

impl<'a> RowCache<'a> {
    fn new(mdp: &'a Mdp, layers: usize) -> Self {
        Self {
            mdp,
            layers: (0..=layers).map(|_| Interner::default()).collect(),
            rows: (0..=layers).map(|_| HashMap::new()).collect(),
        }
    }

    fn row(&mut self, h: usize, id: u32, a: usize) -> Result<&(f64, Vec<(u32, f64)>)> {
        if !self.rows[h].contains_key(&(id, a)) {
            let name = self.layers[h].name(id).to_string();
            let reward = self.mdp.reward(h, &name, a)?;
            let dist = self.mdp.transition(h, &name, a)?;
            let next = dist
                .positive()
                .map(|(s, p)| (self.layers[h + 1].id(s), p))
                .collect();
            self.rows[h].insert((id, a), (reward, next));
        }
        Ok(&self.rows[h][&(id, a)])
    }
}

/// Exact expectation of [`reward_prediction_loss_empirical`] as the dataset
/// grows: a forward pass over the joint law of the true state and the
/// candidate's rollout state, actions drawn by `pi_d` at the true state.
pub fn reward_prediction_loss_expected(candidate: &Mdp, truth: &Mdp, pi_d: &Policy) -> Result<LossReport> {
    let horizon = truth.require_episodic()?;
    if candidate.horizon() != Some(horizon) {
        return Err(Error::SpaceMismatch("candidate and truth horizons differ".into()));
    }
    if candidate.actions() != truth.actions() {
        return Err(Error::SpaceMismatch("candidate and truth action sets differ".into()));
    }
    let n = truth.num_actions();
    let occ = occupancy(truth, pi_d)?;
    let mut truth_rows = RowCache::new(truth, horizon);
    let mut cand_rows = RowCache::new(candidate, horizon);
    let mut per_layer = vec![0.0; horizon];
    for h in 0..horizon {
        let mut joint: IndexMap<(u32, u32), f64> = IndexMap::new();
        for (s, w) in occ.layers[h].iter().map(|(s, v)| (s, v.iter().sum::<f64>())) {
            if w <= 0.0 {
                continue;
            }
            if !candidate.contains(h, s) {
                return Err(Error::UnknownState {
                    layer: h,
                    state: s.clone(),
                });
            }
            let key = (truth_rows.layers[h].id(s), cand_rows.layers[h].id(s));
            *joint.entry(key).or_insert(0.0) += w;
        }
        for k in h..horizon {
            let mut next: IndexMap<(u32, u32), f64> = IndexMap::new();
            for (&(si, ci), &w) in &joint {
                let probs = pi_d.action_probs(k, truth_rows.layers[k].name(si), n)?;
                for (a, &pa) in probs.iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    let (r, t_next) = truth_rows.row(k, si, a)?.clone();
                    let (r_hat, c_next) = cand_rows.row(k, ci, a)?.clone();
                    per_layer[h] += w * pa * (r - r_hat).powi(2);
                    if k + 1 < horizon {
                        for &(sj, p) in &t_next {
                            for &(cj, q) in &c_next {
                                *next.entry((sj, cj)).or_insert(0.0) += w * pa * p * q;
                            }
                        }
                    }
                }
            }
            if next.len() > JOINT_PAIR_LIMIT {
                return Err(Error::TooLarge {
                    what: "joint rollout support",
                    size: next.len(),
                    limit: JOINT_PAIR_LIMIT,
                });
            }
            joint = next;
        }
    }
    Ok(LossReport::exact(per_layer, None, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinskerReport {
    /// `½ Σ |p − q|`.
    pub tv: f64,
    /// `Σ |p − q|` (twice `tv`).
    pub l1: f64,
    /// `Σ p log(p/q)`; `+inf` when `q` misses mass of `p`.
    pub kl: f64,
    pub kl_infinite: bool,
    /// `sqrt(kl / 2)`.
    pub bound: f64,
    pub holds: bool,
}

/// Total variation, KL and the Pinsker bound `tv ≤ sqrt(kl/2)`.
pub fn pinsker_check(p: &Distribution, q: &Distribution) -> PinskerReport {
    let aligned = p.aligned(q);
    let l1: f64 = aligned.iter().map(|(_, x, y)| (x - y).abs()).sum();
    let mut kl = 0.0;
    let mut kl_infinite = false;
    for (_, x, y) in &aligned {
        if *x > 0.0 {
            if *y <= 0.0 {
                kl_infinite = true;
            } else {
                kl += x * (x / y).ln();
            }
        }
    }
    let kl = if kl_infinite { f64::INFINITY } else { kl.max(0.0) };
    let tv = 0.5 * l1;
    let bound = (kl / 2.0).sqrt();
    PinskerReport {
        tv,
        l1,
        kl,
        kl_infinite,
        bound,
        holds: kl_infinite || tv <= bound + 1e-12,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp_core::MdpBuilder;
    use crate::sampling::{DatasetHeader, DatasetKind, Records};
    use proptest::prelude::*;

    fn tuples(ts: Vec<(&str, usize, f64, &str)>, actions: &[&str]) -> Dataset {
        let records: Vec<Transition> = ts
            .into_iter()
            .map(|(s, a, r, n)| Transition {
                layer: 0,
                state: s.into(),
                action: a,
                reward: r,
                next: n.into(),
            })
            .collect();
        Dataset {
            header: DatasetHeader {
                kind: DatasetKind::Tuples,
                seed: 0,
                mdp: "test".into(),
                policy: "test".into(),
                count: records.len(),
                actions: actions.iter().map(|s| s.to_string()).collect(),
            },
            records: Records::Tuples(records),
        }
    }

    fn fan(k: usize) -> Mdp {
        let states: Vec<String> = (0..k).map(|i| format!("s{i}")).collect();
        let mut b = MdpBuilder::discounted(0.5, ["a"]).layer(states.clone());
        for s in &states {
            b = b.row(0, s, 0, 0.0, Distribution::uniform(states.clone()).unwrap());
        }
        b.initial("s0").build().unwrap()
    }

    #[test]
    fn uniform_candidate_costs_log_k() {
        let m = fan(4);
        let d = tuples(vec![("s0", 0, 0.0, "s3"), ("s2", 0, 0.0, "s1")], &["a"]);
        let r = mle_loss(&m, &d).unwrap();
        assert!((r.loss - 4f64.ln()).abs() < 1e-15);
        assert_eq!(r.zero_prob_events, 0);
    }

    #[test]
    fn zero_probability_events_are_counted() {
        let m = MdpBuilder::discounted(0.5, ["a"])
            .layer(["x", "y"])
            .row(0, "x", 0, 0.0, Distribution::point("x"))
            .row(0, "y", 0, 0.0, Distribution::point("y"))
            .initial("x")
            .build()
            .unwrap();
        let d = tuples(vec![("x", 0, 0.0, "y"), ("x", 0, 0.0, "x")], &["a"]);
        let r = mle_loss(&m, &d).unwrap();
        assert_eq!(r.zero_prob_events, 1);
        assert!(r.loss.is_finite());
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn action_mismatch_is_rejected() {
        let d = tuples(vec![("s0", 0, 0.0, "s0")], &["b"]);
        assert!(matches!(mle_loss(&fan(2), &d), Err(Error::SpaceMismatch(_))));
    }

    #[test]
    fn expected_mle_flags_unsupported_truth() {
        let truth = fan(2);
        let cand = MdpBuilder::discounted(0.5, ["a"])
            .layer(["s0", "s1"])
            .row(0, "s0", 0, 0.0, Distribution::point("s0"))
            .row(0, "s1", 0, 0.0, Distribution::point("s0"))
            .initial("s0")
            .build()
            .unwrap();
        let d = Occupancy::from_weights(1, [("s0", 0, 1.0)]).unwrap();
        let r = expected_mle_loss(&cand, &truth, &d).unwrap();
        assert!(r.infinite);
        assert!(r.decomposition.unwrap().excess.is_infinite());
        let r = expected_mle_loss(&truth, &truth, &d).unwrap();
        let dec = r.decomposition.unwrap();
        assert_eq!(dec.excess, 0.0);
        assert!((r.loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn one_d_squared_error() {
        let m = MdpBuilder::discounted(0.5, ["a"])
            .layer(["p0", "p1"])
            .row(0, "p0", 0, 0.0, Distribution::point("p0"))
            .row(0, "p1", 0, 0.0, Distribution::point("p1"))
            .initial("p0")
            .build()
            .unwrap();
        let f = DeterministicModel::try_from_mdp(m).unwrap();
        let emb = Embedding::new([("p0", vec![0.0]), ("p1", vec![1.0])]).unwrap();
        let d = tuples(vec![("p0", 0, 0.0, "p1")], &["a"]);
        assert_eq!(l2_loss(&f, &d, &emb, true).unwrap().loss, 1.0);
        let missing = Embedding::new([("p0", vec![0.0])]).unwrap();
        assert!(matches!(
            l2_loss(&f, &d, &missing, true),
            Err(Error::MissingEmbedding(_))
        ));
    }

    #[test]
    fn pinsker_closed_form() {
        let p = Distribution::from_pairs([("a", 1.0), ("b", 0.0)]).unwrap();
        let q = Distribution::uniform(["a", "b"]).unwrap();
        let r = pinsker_check(&p, &q);
        assert!((r.tv - 0.5).abs() < 1e-15);
        assert!((r.l1 - 1.0).abs() < 1e-15);
        assert!((r.bound - (2f64.ln() / 2.0).sqrt()).abs() < 1e-15);
        assert!((r.bound - 0.5887).abs() < 1e-4);
        assert!(r.holds);
        let same = pinsker_check(&q, &q);
        assert_eq!((same.tv, same.kl, same.holds), (0.0, 0.0, true));
        let inf = pinsker_check(&q, &p);
        assert!(inf.kl_infinite && inf.holds);
    }

    fn dist_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..=8).prop_flat_map(|k| {
            (
                proptest::collection::vec(0.0f64..1.0, k),
                proptest::collection::vec(0.0f64..1.0, k),
            )
        })
    }

    fn normalise(w: &[f64]) -> Option<Distribution> {
        let t: f64 = w.iter().sum();
        (t > 0.0).then(|| {
            Distribution::from_pairs(w.iter().enumerate().map(|(i, x)| (format!("x{i}"), x / t))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn pinsker_never_violated((p, q) in dist_strategy()) {
            if let (Some(p), Some(q)) = (normalise(&p), normalise(&q)) {
                let r = pinsker_check(&p, &q);
                prop_assert!(r.holds, "{r:?}");
                prop_assert!((r.l1 - 2.0 * r.tv).abs() < 1e-15);
            }
        }
    }
}
