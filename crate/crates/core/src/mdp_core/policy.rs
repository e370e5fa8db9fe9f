use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::abstraction::Encoder;
use crate::error::{Error, Result};

/// A (possibly layer-dependent) stochastic policy.
///
/// Maps are indexed by layer; discounted MDPs use layer 0 only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Uniform,
    /// The same action everywhere.
    Fixed { action: usize },
    Deterministic { layers: Vec<BTreeMap<String, usize>> },
    Tabular { layers: Vec<BTreeMap<String, Vec<f64>>> },
    /// `s ↦ latent(φ(s))`; `latent` is a policy over the encoder's latents.
    Lifted {
        encoder: Encoder,
        latent: Box<Policy>,
    },
}

impl Policy {
    pub fn deterministic<S: Into<String>>(
        entries: impl IntoIterator<Item = (usize, S, usize)>,
    ) -> Self {
        let mut layers: Vec<BTreeMap<String, usize>> = Vec::new();
        for (h, s, a) in entries {
            if layers.len() <= h {
                layers.resize_with(h + 1, BTreeMap::new);
            }
            layers[h].insert(s.into(), a);
        }
        Policy::Deterministic { layers }
    }

    pub fn tabular<S: Into<String>>(entries: impl IntoIterator<Item = (usize, S, Vec<f64>)>) -> Self {
        let mut layers: Vec<BTreeMap<String, Vec<f64>>> = Vec::new();
        for (h, s, p) in entries {
            if layers.len() <= h {
                layers.resize_with(h + 1, BTreeMap::new);
            }
            layers[h].insert(s.into(), p);
        }
        Policy::Tabular { layers }
    }

    /// Action probabilities at `(layer, state)`, one entry per action.
    pub fn action_probs(&self, layer: usize, state: &str, num_actions: usize) -> Result<Vec<f64>> {
        let undefined = || Error::PolicyUndefined {
            layer,
            state: state.to_string(),
        };
        match self {
            Policy::Uniform => Ok(vec![1.0 / num_actions as f64; num_actions]),
            Policy::Fixed { action } => one_hot(*action, num_actions),
            Policy::Deterministic { layers } => {
                let a = layers.get(layer).and_then(|m| m.get(state)).ok_or_else(undefined)?;
                one_hot(*a, num_actions)
            }
            Policy::Tabular { layers } => {
                let p = layers.get(layer).and_then(|m| m.get(state)).ok_or_else(undefined)?;
                if p.len() != num_actions {
                    return Err(Error::InvalidDistribution(format!(
                        "policy row at {state:?} has {} entries for {num_actions} actions",
                        p.len()
                    )));
                }
                Ok(p.clone())
            }
            Policy::Lifted { encoder, latent } => {
                let x = encoder.encode(layer, state)?;
                latent.action_probs(layer, x, num_actions)
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            Policy::Fixed { .. } | Policy::Deterministic { .. } => true,
            Policy::Uniform | Policy::Tabular { .. } => false,
            Policy::Lifted { latent, .. } => latent.is_deterministic(),
        }
    }

    /// Short identifier used in dataset headers and reports.
    pub fn descriptor(&self) -> String {
        match self {
            Policy::Uniform => "uniform".into(),
            Policy::Fixed { action } => format!("fixed:{action}"),
            Policy::Deterministic { .. } => "deterministic".into(),
            Policy::Tabular { .. } => "tabular".into(),
            Policy::Lifted { latent, .. } => format!("lifted:{}", latent.descriptor()),
        }
    }
}

fn one_hot(action: usize, num_actions: usize) -> Result<Vec<f64>> {
    if action >= num_actions {
        return Err(Error::UnknownAction(action));
    }
    let mut v = vec![0.0; num_actions];
    v[action] = 1.0;
    Ok(v)
}
