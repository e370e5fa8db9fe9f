use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp_core::StateSpace;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub map: BTreeMap<String, String>,
}

/// A per-layer map from states to latent labels `φ: S → X`.
///
/// The latent set of a layer is the image of its map, ordered by label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new(layers: Vec<BTreeMap<String, String>>) -> Self {
        Self {
            layers: layers.into_iter().map(|map| EncoderLayer { map }).collect(),
        }
    }

    pub fn identity(space: &StateSpace) -> Self {
        Self::new(
            space
                .layers()
                .iter()
                .map(|l| l.iter().map(|s| (s.clone(), s.clone())).collect())
                .collect(),
        )
    }

    /// Every state of a layer mapped to the same latent, `label` + layer index.
    pub fn constant(space: &StateSpace, label: &str) -> Self {
        Self::new(
            space
                .layers()
                .iter()
                .enumerate()
                .map(|(h, l)| l.iter().map(|s| (s.clone(), format!("{label}{h}"))).collect())
                .collect(),
        )
    }

    /// Encoder whose latent for a block is its members joined by `+`.
    pub fn from_blocks(blocks: &[Vec<Vec<String>>]) -> Self {
        Self::new(
            blocks
                .iter()
                .map(|layer| {
                    let mut map = BTreeMap::new();
                    for block in layer {
                        let label = block.join("+");
                        for s in block {
                            map.insert(s.clone(), label.clone());
                        }
                    }
                    map
                })
                .collect(),
        )
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn encode(&self, layer: usize, state: &str) -> Result<&str> {
        self.layers
            .get(layer)
            .and_then(|l| l.map.get(state))
            .map(String::as_str)
            .ok_or_else(|| Error::Unencoded {
                layer,
                state: state.to_string(),
            })
    }

    pub fn latents(&self, layer: usize) -> Vec<String> {
        self.layers
            .get(layer)
            .map(|l| l.map.values().cloned().collect::<BTreeSet<_>>().into_iter().collect())
            .unwrap_or_default()
    }

    pub fn num_latents(&self, layer: usize) -> usize {
        self.latents(layer).len()
    }

    pub fn total_latents(&self) -> usize {
        (0..self.num_layers()).map(|h| self.num_latents(h)).sum()
    }

    /// States of `layer` mapped to `latent`, in map (name) order.
    pub fn members(&self, layer: usize, latent: &str) -> Vec<&str> {
        self.layers
            .get(layer)
            .map(|l| {
                l.map
                    .iter()
                    .filter(|(_, x)| x.as_str() == latent)
                    .map(|(s, _)| s.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Errors unless every state of `space` is mapped.
    pub fn check_total(&self, space: &StateSpace) -> Result<()> {
        for (h, states) in space.layers().iter().enumerate() {
            for s in states {
                self.encode(h, s)?;
            }
        }
        Ok(())
    }

    /// Same partition with latents renamed by `f(layer, latent)`.
    pub fn relabel<F: FnMut(usize, &str) -> String>(&self, mut f: F) -> Self {
        Self::new(
            self.layers
                .iter()
                .enumerate()
                .map(|(h, l)| l.map.iter().map(|(s, x)| (s.clone(), f(h, x))).collect())
                .collect(),
        )
    }

    /// Canonical partition id: per layer, the restricted growth string of
    /// block indices over `space` order, layers joined by `/`.
    pub fn canonical_id(&self, space: &StateSpace) -> Result<String> {
        let mut parts = Vec::with_capacity(space.num_layers());
        for (h, states) in space.layers().iter().enumerate() {
            let mut seen: Vec<&str> = Vec::new();
            let mut rgs = String::new();
            for s in states {
                let x = self.encode(h, s)?;
                let i = seen.iter().position(|y| *y == x).unwrap_or_else(|| {
                    seen.push(x);
                    seen.len() - 1
                });
                rgs.push_str(&block_digit(i));
            }
            parts.push(rgs);
        }
        Ok(parts.join("/"))
    }
}

fn block_digit(i: usize) -> String {
    if i < 10 {
        i.to_string()
    } else {
        format!("({i})")
    }
}
