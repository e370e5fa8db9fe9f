use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for "sums to one" checks.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// A finite distribution over opaque identifiers (states or latents).
///
/// Entries keep their construction order; every reduction over a
/// distribution walks the support in that order so results are reproducible
/// bit for bit. Zero-probability entries are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    support: Vec<String>,
    probs: Vec<f64>,
}

impl Distribution {
    /// Builds a distribution, rejecting negative or non-finite weights,
    /// duplicate support entries and totals off by more than [`PROB_TOLERANCE`].
    pub fn new(support: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        let d = Self { support, probs };
        match d.check() {
            Some(msg) => Err(Error::InvalidDistribution(msg)),
            None => Ok(d),
        }
    }

    /// Builds without validation. Used by `validate` tests and by loaders that
    /// report violations instead of failing.
    pub fn new_unchecked(support: Vec<String>, probs: Vec<f64>) -> Self {
        Self { support, probs }
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let (support, probs) = pairs.into_iter().map(|(s, p)| (s.into(), p)).unzip();
        Self::new(support, probs)
    }

    pub fn point(state: impl Into<String>) -> Self {
        Self {
            support: vec![state.into()],
            probs: vec![1.0],
        }
    }

    pub fn uniform<S: Into<String>>(states: impl IntoIterator<Item = S>) -> Result<Self> {
        let support: Vec<String> = states.into_iter().map(Into::into).collect();
        if support.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let p = 1.0 / support.len() as f64;
        let probs = vec![p; support.len()];
        Self::new(support, probs)
    }

    /// Returns a description of the first violated invariant, if any.
    pub fn check(&self) -> Option<String> {
        if self.support.len() != self.probs.len() {
            return Some("support and probabilities differ in length".into());
        }
        if self.support.is_empty() {
            return Some("empty support".into());
        }
        for (s, p) in self.iter() {
            if !p.is_finite() || p < 0.0 {
                return Some(format!("probability of {s:?} is {p}"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.support {
            if !seen.insert(s.as_str()) {
                return Some(format!("duplicate support entry {s:?}"));
            }
        }
        let total = self.total();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Some(format!("probabilities sum to {total}"));
        }
        None
    }

    pub fn support(&self) -> &[String] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.support
            .iter()
            .map(String::as_str)
            .zip(self.probs.iter().copied())
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Probability of `state`; zero when it is not in the support.
    pub fn prob(&self, state: &str) -> f64 {
        self.iter()
            .find(|(s, _)| *s == state)
            .map_or(0.0, |(_, p)| p)
    }

    /// Support entries carrying positive mass.
    pub fn positive(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.iter().filter(|(_, p)| *p > 0.0)
    }

    /// Single positive-mass outcome, if the distribution is a point mass.
    pub fn as_point(&self) -> Option<&str> {
        let mut pos = self.positive();
        match (pos.next(), pos.next()) {
            (Some((s, _)), None) => Some(s),
            _ => None,
        }
    }

    /// Inverse-CDF draw from a uniform `u` in `[0, 1)`, walking the support in
    /// order. Zero-mass entries are never selected.
    pub fn sample_with(&self, u: f64) -> &str {
        let mut cum = 0.0;
        let mut last = None;
        for (s, p) in self.iter() {
            if p <= 0.0 {
                continue;
            }
            cum += p;
            last = Some(s);
            if u < cum {
                return s;
            }
        }
        // rounding left a sliver above the cumulative total
        last.unwrap_or(&self.support[0])
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.positive().map(|(_, p)| -p * p.ln()).sum()
    }

    /// Pushes this distribution through `map`, accumulating mass per image in
    /// first-appearance order.
    pub fn pushforward<F>(&self, mut map: F) -> Result<Distribution>
    where
        F: FnMut(&str) -> Result<String>,
    {
        let mut acc: indexmap::IndexMap<String, f64> = indexmap::IndexMap::new();
        for (s, p) in self.iter() {
            *acc.entry(map(s)?).or_insert(0.0) += p;
        }
        let (support, probs) = acc.into_iter().unzip();
        Ok(Distribution { support, probs })
    }

    /// Probabilities of `self` and `other` aligned on the union of supports
    /// (self's order first, then other's new entries).
    pub fn aligned(&self, other: &Distribution) -> Vec<(String, f64, f64)> {
        let mut out: Vec<(String, f64, f64)> = self
            .iter()
            .map(|(s, p)| (s.to_string(), p, other.prob(s)))
            .collect();
        for (s, q) in other.iter() {
            if !self.support.iter().any(|x| x == s) {
                out.push((s.to_string(), 0.0, q));
            }
        }
        out
    }

    /// Mixture `Σ w_i · d_i` normalised by `Σ w_i`, support in first-appearance order.
    pub fn mixture<'a>(parts: impl IntoIterator<Item = (f64, &'a Distribution)>) -> Option<Self> {
        let mut acc: indexmap::IndexMap<String, f64> = indexmap::IndexMap::new();
        let mut total = 0.0;
        for (w, d) in parts {
            total += w;
            for (s, p) in d.iter() {
                *acc.entry(s.to_string()).or_insert(0.0) += w * p;
            }
        }
        if total <= 0.0 {
            return None;
        }
        let (support, probs): (Vec<String>, Vec<f64>) =
            acc.into_iter().map(|(s, p)| (s, p / total)).unzip();
        Some(Distribution { support, probs })
    }

    /// Same distribution with support sorted by identifier.
    pub fn sorted(&self) -> Distribution {
        let m: BTreeMap<&str, f64> = self.iter().collect();
        let (support, probs) = m.into_iter().map(|(s, p)| (s.to_string(), p)).unzip();
        Distribution { support, probs }
    }

    /// Equality of the probability assigned to every identifier, within `tol`.
    pub fn approx_eq(&self, other: &Distribution, tol: f64) -> bool {
        self.aligned(other)
            .iter()
            .all(|(_, p, q)| (p - q).abs() <= tol)
    }
}

/// Cross-entropy `−Σ p log q` split into `(entropy(p), KL(p‖q))`.
///
/// Returns `None` for the KL part when `q` has zero mass where `p` does not.
pub fn cross_entropy_parts(p: &Distribution, q: &Distribution) -> (f64, Option<f64>) {
    let mut entropy = 0.0;
    let mut kl = 0.0;
    for (s, ps) in p.positive() {
        let qs = q.prob(s);
        entropy -= ps * ps.ln();
        if qs <= 0.0 {
            return (p.entropy(), None);
        }
        kl += ps * (ps / qs).ln();
    }
    (entropy, Some(kl))
}
