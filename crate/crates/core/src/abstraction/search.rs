use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::Encoder;
use super::latent::{bisimulation_check, expected_latent_mle_loss, optimal_latent_dynamics, BISIM_TOLERANCE};
use crate::error::{Error, Result};
use crate::mdp_core::{Mdp, Occupancy};

/// Largest layer the partition search accepts.
pub const MAX_SEARCH_STATES: usize = 12;
/// Largest number of candidate encoders (product over layers) evaluated.
pub const MAX_SEARCH_CANDIDATES: usize = 1_000_000;

/// One admissible encoder with its optimal latent dynamics evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderScore {
    /// Canonical partition id, independent of latent labels.
    pub id: String,
    #[serde(skip_serializing)]
    #[serde(default = "empty_encoder")]
    pub encoder: Encoder,
    pub loss: f64,
    pub entropy: f64,
    pub excess: f64,
    pub is_bisim: bool,
    pub num_latents: usize,
}

fn empty_encoder() -> Encoder {
    Encoder::new(Vec::new())
}

/// Restricted growth strings over `states` with at most `max_blocks` blocks
/// where every block is reward-homogeneous (`compatible(i, j)` between a
/// state and its block's first member).
fn admissible_partitions<F>(n: usize, max_blocks: usize, compatible: &F) -> Vec<Vec<usize>>
where
    F: Fn(usize, usize) -> bool,
{
    fn go<F: Fn(usize, usize) -> bool>(
        i: usize,
        n: usize,
        max_blocks: usize,
        compatible: &F,
        rgs: &mut Vec<usize>,
        heads: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if i == n {
            out.push(rgs.clone());
            return;
        }
        for b in 0..heads.len() {
            if compatible(heads[b], i) {
                rgs.push(b);
                go(i + 1, n, max_blocks, compatible, rgs, heads, out);
                rgs.pop();
            }
        }
        if heads.len() < max_blocks {
            rgs.push(heads.len());
            heads.push(i);
            go(i + 1, n, max_blocks, compatible, rgs, heads, out);
            heads.pop();
            rgs.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, max_blocks, compatible, &mut Vec::new(), &mut Vec::new(), &mut out);
    out
}

fn blocks(states: &[String], rgs: &[usize]) -> Vec<Vec<String>> {
    let k = rgs.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (s, &b) in states.iter().zip(rgs) {
        out[b].push(s.clone());
    }
    out
}

/// Exhaustive search over reward-preserving encoders with at most
/// `max_latents` latents per layer, each paired with its population-optimal
/// latent dynamics and ranked by expected latent MLE loss (ties by id).
pub fn search_encoders(truth: &Mdp, data_dist: &Occupancy, max_latents: usize) -> Result<Vec<EncoderScore>> {
    if max_latents == 0 {
        return Err(Error::InvalidParameter("max_latents must be positive".into()));
    }
    let space = truth.state_space()?;
    let mut per_layer: Vec<Vec<Vec<usize>>> = Vec::with_capacity(space.num_layers());
    for h in 0..space.num_layers() {
        let states = space.layer(h);
        if states.len() > MAX_SEARCH_STATES {
            return Err(Error::TooLarge {
                what: "states per layer for encoder search",
                size: states.len(),
                limit: MAX_SEARCH_STATES,
            });
        }
        let rewards: Vec<Vec<f64>> = if truth.is_terminal(h) {
            vec![Vec::new(); states.len()]
        } else {
            states
                .iter()
                .map(|s| (0..truth.num_actions()).map(|a| truth.reward(h, s, a)).collect())
                .collect::<Result<_>>()?
        };
        let compatible = |i: usize, j: usize| {
            rewards[i]
                .iter()
                .zip(&rewards[j])
                .all(|(x, y)| (x - y).abs() <= BISIM_TOLERANCE)
        };
        per_layer.push(admissible_partitions(states.len(), max_latents, &compatible));
    }
    let total = per_layer
        .iter()
        .try_fold(1usize, |acc, p| acc.checked_mul(p.len()))
        .unwrap_or(usize::MAX);
    if total > MAX_SEARCH_CANDIDATES {
        return Err(Error::TooLarge {
            what: "candidate encoders",
            size: total,
            limit: MAX_SEARCH_CANDIDATES,
        });
    }
    let mut scores = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let mut layers = Vec::with_capacity(per_layer.len());
            for (h, parts) in per_layer.iter().enumerate() {
                layers.push(blocks(space.layer(h), &parts[idx % parts.len()]));
                idx /= parts.len();
            }
            let encoder = Encoder::from_blocks(&layers);
            let lm = optimal_latent_dynamics(&encoder, truth, data_dist)?;
            let report = expected_latent_mle_loss(&lm, truth, data_dist)?;
            let d = report.decomposition.unwrap_or_default();
            Ok(EncoderScore {
                id: encoder.canonical_id(&space)?,
                is_bisim: bisimulation_check(truth, &encoder)?.is_bisimulation(),
                num_latents: encoder.total_latents(),
                loss: report.loss,
                entropy: d.entropy,
                excess: d.excess,
                encoder,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| a.loss.total_cmp(&b.loss).then_with(|| a.id.cmp(&b.id)));
    Ok(scores)
}
