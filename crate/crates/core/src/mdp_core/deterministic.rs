use super::mdp::Mdp;
use crate::error::{Error, Result};

/// An MDP whose every row is a point mass, read as `s' = f(s, a)`.
#[derive(Debug, Clone)]
pub struct DeterministicModel {
    mdp: Mdp,
}

impl DeterministicModel {
    /// Wraps `mdp` after checking every row has exactly one positive outcome.
    pub fn try_from_mdp(mdp: Mdp) -> Result<Self> {
        let space = mdp.state_space()?;
        for h in mdp.decision_layers() {
            for s in space.layer(h) {
                for a in 0..mdp.num_actions() {
                    if mdp.transition(h, s, a)?.as_point().is_none() {
                        return Err(Error::InvalidParameter(format!(
                            "row ({s:?}, {:?}) at layer {h} is not deterministic",
                            mdp.actions()[a]
                        )));
                    }
                }
            }
        }
        Ok(Self { mdp })
    }

    /// `f(s, a)`.
    pub fn next(&self, layer: usize, state: &str, action: usize) -> Result<String> {
        let row = self.mdp.transition(layer, state, action)?;
        Ok(row
            .as_point()
            .expect("rows checked at construction")
            .to_string())
    }

    pub fn as_mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn into_mdp(self) -> Mdp {
        self.mdp
    }
}
