//! The on-disk MDP schema.
//!
//! ```json
//! {"kind": "episodic", "horizon": 2, "actions": ["L", "R"],
//!  "layers": [{"states": ["s"]}, {"states": ["A", "C"]}, {"states": ["end"]}],
//!  "transitions": {"s|L": [["A", 0.5], ["C", 0.5]], ...},
//!  "rewards": {"s|L": 0.0, ...}, "initial": "s", "rmax": 1.0}
//! ```
//!
//! Discounted MDPs use `"gamma"` and a flat `"states"` list. Row keys are
//! `"state|action"`, so episodic state names must be unique across layers.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::distribution::Distribution;
use super::mdp::{Mdp, MdpBuilder, MdpKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    pub states: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub actions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<String>>,
    pub transitions: BTreeMap<String, Vec<(String, f64)>>,
    pub rewards: BTreeMap<String, f64>,
    pub initial: String,
    pub rmax: f64,
}

fn row_key(state: &str, action: &str) -> String {
    format!("{state}|{action}")
}

impl MdpJson {
    pub fn from_mdp(m: &Mdp) -> Result<Self> {
        let space = m.state_space()?;
        let mut transitions = BTreeMap::new();
        let mut rewards = BTreeMap::new();
        for h in m.decision_layers() {
            for s in space.layer(h) {
                for (a, name) in m.actions().iter().enumerate() {
                    let row = m.transition(h, s, a)?;
                    let key = row_key(s, name);
                    transitions.insert(
                        key.clone(),
                        row.iter().map(|(n, p)| (n.to_string(), p)).collect(),
                    );
                    rewards.insert(key, m.reward(h, s, a)?);
                }
            }
        }
        let (kind, horizon, gamma, layers, states) = match m.kind() {
            MdpKind::Episodic { horizon } => (
                "episodic",
                Some(horizon),
                None,
                Some(
                    space
                        .layers()
                        .iter()
                        .map(|l| LayerJson { states: l.clone() })
                        .collect(),
                ),
                None,
            ),
            MdpKind::Discounted { gamma } => (
                "discounted",
                None,
                Some(gamma),
                None,
                Some(space.layer(0).to_vec()),
            ),
        };
        Ok(Self {
            name: Some(m.name().to_string()),
            kind: kind.into(),
            horizon,
            gamma,
            actions: m.actions().to_vec(),
            layers,
            states,
            transitions,
            rewards,
            initial: m.initial().to_string(),
            rmax: m.rmax(),
        })
    }

    /// Builds the MDP. Row contents are not validated here; run
    /// [`validate`](super::validate) for that.
    pub fn to_mdp(&self) -> Result<Mdp> {
        let (kind, layers) = match self.kind.as_str() {
            "episodic" => {
                let horizon = self
                    .horizon
                    .ok_or_else(|| Error::Schema("episodic MDP needs \"horizon\"".into()))?;
                let layers = self
                    .layers
                    .as_ref()
                    .ok_or_else(|| Error::Schema("episodic MDP needs \"layers\"".into()))?;
                (
                    MdpKind::Episodic { horizon },
                    layers.iter().map(|l| l.states.clone()).collect::<Vec<_>>(),
                )
            }
            "discounted" => {
                let gamma = self
                    .gamma
                    .ok_or_else(|| Error::Schema("discounted MDP needs \"gamma\"".into()))?;
                let states = self
                    .states
                    .as_ref()
                    .ok_or_else(|| Error::Schema("discounted MDP needs \"states\"".into()))?;
                (MdpKind::Discounted { gamma }, vec![states.clone()])
            }
            other => return Err(Error::Schema(format!("unknown kind {other:?}"))),
        };
        let mut layer_of: HashMap<&str, usize> = HashMap::new();
        for (h, states) in layers.iter().enumerate() {
            for s in states {
                if layer_of.insert(s, h).is_some() {
                    return Err(Error::Schema(format!(
                        "state {s:?} appears in more than one layer"
                    )));
                }
            }
        }
        let mut b = MdpBuilder::new(kind, self.actions.clone());
        if let Some(name) = &self.name {
            b = b.name(name.clone());
        }
        for states in &layers {
            b = b.layer(states.iter().cloned());
        }
        for (key, row) in &self.transitions {
            let (s, a) = key
                .rsplit_once('|')
                .ok_or_else(|| Error::Schema(format!("row key {key:?} is not \"state|action\"")))?;
            let h = *layer_of
                .get(s)
                .ok_or_else(|| Error::Schema(format!("row key {key:?} names an unknown state")))?;
            let ai = self
                .actions
                .iter()
                .position(|x| x == a)
                .ok_or_else(|| Error::Schema(format!("row key {key:?} names an unknown action")))?;
            let reward = *self
                .rewards
                .get(key)
                .ok_or_else(|| Error::Schema(format!("missing reward for {key:?}")))?;
            let (support, probs) = row.iter().cloned().unzip();
            b = b.row(h, s, ai, reward, Distribution::new_unchecked(support, probs));
        }
        if let Some(key) = self.rewards.keys().find(|k| !self.transitions.contains_key(*k)) {
            return Err(Error::Schema(format!("reward for {key:?} has no transition row")));
        }
        b.initial(self.initial.clone()).rmax(self.rmax).build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "kind": "discounted", "gamma": 0.9, "actions": ["a"],
        "states": ["x", "y"],
        "transitions": {"x|a": [["y", 1.0]], "y|a": [["x", 0.5], ["y", 0.5]]},
        "rewards": {"x|a": 1.0, "y|a": 0.0},
        "initial": "x", "rmax": 1.0
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let j: MdpJson = serde_json::from_str(EXAMPLE).unwrap();
        let m = j.to_mdp().unwrap();
        assert_eq!(m.reward(0, "x", 0).unwrap(), 1.0);
        assert_eq!(m.transition(0, "y", 0).unwrap().prob("x"), 0.5);
        let back = MdpJson::from_mdp(&m).unwrap();
        assert_eq!(back.transitions, j.transitions);
        assert_eq!(back.rewards, j.rewards);
    }

    #[test]
    fn missing_reward_is_schema_error() {
        let mut j: MdpJson = serde_json::from_str(EXAMPLE).unwrap();
        j.rewards.remove("y|a");
        assert!(matches!(j.to_mdp(), Err(Error::Schema(_))));
    }
}
