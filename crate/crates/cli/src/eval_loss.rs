//! `eval-loss`: evaluate one model-learning loss on a dataset.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use mbrl_core::abstraction::{
    expected_latent_mle_loss, fit_latent_model, latent_mle_loss, optimal_latent_dynamics, Encoder,
};
use mbrl_core::losses::*;
use mbrl_core::mdp_core::{occupancy, DeterministicModel, Mdp, Occupancy, Policy};
use mbrl_core::sampling::{sample_trajectories, sample_tuples, Dataset};
use serde::Serialize;

use crate::inputs::{read_dataset, read_embedding, read_encoder, read_mdp, resolve, ModelArgs};
use crate::output::HeadlineRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mle,
    L2,
    LatentMle,
    RewardPred,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub loss: LossKind,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Ground-truth MDP for `--mdp` inputs (built-ins carry their own).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// JSONL dataset; sampled from the truth when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of tuples or trajectories to sample when `--data` is absent.
    #[arg(long, visible_alias = "trajectories", default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// State embedding for `l2`: `{"state": [x, ...]}`.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    /// Report the L2 distance instead of its square.
    #[arg(long)]
    pub unsquared: bool,
    /// Encoder for `latent-mle`: identity, constant, a built-in encoder name
    /// (bisim, degenerate) or a JSON file with one state→latent map per layer.
    #[arg(long)]
    pub encoder: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub source: String,
    pub count: usize,
    pub seed: u64,
    pub policy: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub loss: LossKind,
    pub model: String,
    pub data: DataSummary,
    /// Loss on the dataset, with its standard error.
    pub empirical: LossReport,
    /// Expected loss under the distribution the data was drawn from, when
    /// that distribution is known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<LossReport>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn headline(&self) -> Vec<HeadlineRow> {
        let mut rows = vec![HeadlineRow::estimate("loss", self.empirical.loss, self.empirical.standard_error)];
        if let Some(e) = &self.exact {
            rows.insert(0, HeadlineRow::exact("loss", e.loss));
        }
        rows
    }
}

/// The dataset plus, when we drew it ourselves, the distribution it came from.
struct Data {
    set: Dataset,
    dist: Option<Occupancy>,
    source: String,
}

fn load_data(args: &EvalArgs, truth: Option<&Mdp>, pi_d: &Policy) -> Result<Data> {
    if let Some(path) = &args.data {
        return Ok(Data {
            set: read_dataset(path)?,
            dist: None,
            source: path.display().to_string(),
        });
    }
    let Some(truth) = truth else {
        bail!("no dataset: pass --data, or a truth via --truth or --builtin");
    };
    let occ = occupancy(truth, pi_d)?;
    let set = if truth.is_episodic() {
        sample_trajectories(truth, pi_d, args.samples, args.seed)?
    } else {
        sample_tuples(truth, &occ, args.samples, args.seed)?
    };
    Ok(Data {
        set,
        dist: Some(occ),
        source: "sampled".into(),
    })
}

fn pick_encoder(args: &EvalArgs, model: &Mdp, named: &std::collections::BTreeMap<String, Encoder>) -> Result<Encoder> {
    let spec = args.encoder.as_deref().unwrap_or("identity");
    Ok(match spec {
        "identity" => Encoder::identity(&model.state_space()?),
        "constant" => Encoder::constant(&model.state_space()?, "c"),
        name if named.contains_key(name) => named[name].clone(),
        path => read_encoder(std::path::Path::new(path))
            .with_context(|| format!("--encoder {path:?} is neither a known encoder nor a readable file"))?,
    })
}

pub fn run(args: &EvalArgs) -> Result<EvalReport> {
    let mut resolved = resolve(&args.model)?;
    if let Some(path) = &args.truth {
        resolved.truth = Some(read_mdp(path)?);
    }
    let data = load_data(args, resolved.truth.as_ref(), &resolved.pi_d)?;
    let model = &resolved.model;
    let truth = resolved.truth.as_ref();
    // Exact values need both the truth and the sampling distribution.
    let known = truth.zip(data.dist.as_ref());
    let mut warnings = Vec::new();
    let (empirical, exact) = match args.loss {
        LossKind::Mle => (
            mle_loss(model, &data.set)?,
            known.map(|(t, d)| expected_mle_loss(model, t, d)).transpose()?,
        ),
        LossKind::L2 => {
            let Some(path) = &args.embedding else {
                bail!("--loss l2 needs --embedding");
            };
            let emb = read_embedding(path)?;
            let det = DeterministicModel::try_from_mdp(model.clone())?;
            let squared = !args.unsquared;
            (
                l2_loss(&det, &data.set, &emb, squared)?,
                known
                    .map(|(t, d)| expected_l2_loss(&det, t, d, &emb, squared))
                    .transpose()?,
            )
        }
        LossKind::LatentMle => {
            let phi = pick_encoder(args, model, &resolved.encoders)?;
            let fitted = fit_latent_model(&phi, model, &data.set)?;
            if fitted.is_degenerate() {
                warnings.push(
                    "latent model is degenerate: every latent transition is deterministic, so the loss \
                     says nothing about the true dynamics"
                        .into(),
                );
            }
            let exact = match known {
                Some((t, d)) => {
                    let lm = optimal_latent_dynamics(&phi, t, d)?;
                    Some(expected_latent_mle_loss(&lm, t, d)?)
                }
                None => None,
            };
            (latent_mle_loss(&fitted, &data.set)?, exact)
        }
        LossKind::RewardPred => (
            reward_prediction_loss_empirical(model, &data.set, args.seed)?,
            match (truth, &data.dist) {
                (Some(t), Some(_)) => Some(reward_prediction_loss_expected(model, t, &resolved.pi_d)?),
                _ => None,
            },
        ),
    };
    if empirical.zero_prob_events > 0 {
        warnings.push(format!(
            "{} observed transitions have zero probability under the model",
            empirical.zero_prob_events
        ));
    }
    Ok(EvalReport {
        loss: args.loss,
        model: model.name().to_string(),
        data: DataSummary {
            source: data.source,
            count: data.set.len(),
            seed: data.set.header.seed,
            policy: data.set.header.policy.clone(),
        },
        empirical,
        exact,
        warnings,
    })
}
