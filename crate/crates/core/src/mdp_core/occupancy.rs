use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State-action weights, one map per decision layer.
///
/// Discounted occupancies have a single layer holding the normalised
/// discounted measure; episodic ones hold per-layer distributions (each layer
/// sums to one when `normalized`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub layers: Vec<BTreeMap<String, Vec<f64>>>,
    pub num_actions: usize,
    pub normalized: bool,
    /// Mass dropped by truncating the discounted series (0 otherwise).
    #[serde(default)]
    pub truncation_error: f64,
}

impl Occupancy {
    pub fn empty(num_layers: usize, num_actions: usize) -> Self {
        Self {
            layers: vec![BTreeMap::new(); num_layers],
            num_actions,
            normalized: false,
            truncation_error: 0.0,
        }
    }

    /// Builds a single-layer occupancy from `(state, action, weight)` triples
    /// and normalises it.
    pub fn from_weights<S: Into<String>>(
        num_actions: usize,
        weights: impl IntoIterator<Item = (S, usize, f64)>,
    ) -> Result<Self> {
        let mut occ = Self::empty(1, num_actions);
        for (s, a, w) in weights {
            occ.add(0, s.into(), a, w)?;
        }
        occ.normalize()?;
        Ok(occ)
    }

    pub fn add(&mut self, layer: usize, state: String, action: usize, weight: f64) -> Result<()> {
        if action >= self.num_actions {
            return Err(Error::UnknownAction(action));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidParameter(format!("occupancy weight {weight}")));
        }
        if self.layers.len() <= layer {
            self.layers.resize_with(layer + 1, BTreeMap::new);
        }
        let n = self.num_actions;
        self.layers[layer].entry(state).or_insert_with(|| vec![0.0; n])[action] += weight;
        Ok(())
    }

    /// Rescales each layer to total mass one.
    pub fn normalize(&mut self) -> Result<()> {
        for (h, layer) in self.layers.iter_mut().enumerate() {
            let total: f64 = layer.values().flat_map(|v| v.iter()).sum();
            if total <= 0.0 {
                return Err(Error::InvalidParameter(format!("layer {h} has no mass")));
            }
            for v in layer.values_mut() {
                for w in v.iter_mut() {
                    *w /= total;
                }
            }
        }
        self.normalized = true;
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn get(&self, layer: usize, state: &str, action: usize) -> f64 {
        self.layers
            .get(layer)
            .and_then(|m| m.get(state))
            .and_then(|v| v.get(action))
            .copied()
            .unwrap_or(0.0)
    }

    /// Total weight on `state` at `layer`, summed over actions.
    pub fn state_mass(&self, layer: usize, state: &str) -> f64 {
        self.layers
            .get(layer)
            .and_then(|m| m.get(state))
            .map_or(0.0, |v| v.iter().sum())
    }

    pub fn layer_mass(&self, layer: usize) -> f64 {
        self.layers
            .get(layer)
            .map_or(0.0, |m| m.values().flat_map(|v| v.iter()).sum())
    }

    /// `(layer, state, action, weight)` in layer, state-name, action order,
    /// including zero weights of listed states.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &str, usize, f64)> + '_ {
        self.layers.iter().enumerate().flat_map(|(h, m)| {
            m.iter().flat_map(move |(s, v)| {
                v.iter()
                    .enumerate()
                    .map(move |(a, &w)| (h, s.as_str(), a, w))
            })
        })
    }

    /// Entries with positive weight.
    pub fn positive(&self) -> impl Iterator<Item = (usize, &str, usize, f64)> + '_ {
        self.iter().filter(|e| e.3 > 0.0)
    }
}
