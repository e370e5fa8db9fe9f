//! Loading MDPs, datasets, encoders and embeddings from flags.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use mbrl_core::abstraction::Encoder;
use mbrl_core::counterexamples::{build_bisim_degenerate, build_prop1_variant, build_prop2, REGISTRY};
use mbrl_core::losses::Embedding;
use mbrl_core::mdp_core::{Mdp, MdpJson, Policy};
use mbrl_core::sampling::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Truth,
    Wrong,
}

/// Model source: a JSON file or one of the registered instances.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// MDP in the JSON interchange format.
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    pub mdp: Option<std::path::PathBuf>,
    /// Registered instance: prop1, prop1-variant, prop2, bisim-degenerate.
    #[arg(long)]
    pub builtin: Option<String>,
    /// Which model of a built-in pair to use.
    #[arg(long, value_enum, default_value = "truth")]
    pub model: Which,
    #[arg(long, default_value_t = 4)]
    pub horizon: usize,
    #[arg(long = "p-b", default_value_t = 0.0)]
    pub p_b: f64,
}

/// A resolved model together with whatever context a built-in provides.
pub struct Resolved {
    pub model: Mdp,
    /// Ground truth, when known.
    pub truth: Option<Mdp>,
    pub pi_d: Policy,
    /// Named encoders shipped with the instance.
    pub encoders: BTreeMap<String, Encoder>,
}

pub fn resolve(args: &ModelArgs) -> Result<Resolved> {
    if let Some(path) = &args.mdp {
        return Ok(Resolved {
            model: read_mdp(path)?,
            truth: None,
            pi_d: Policy::Uniform,
            encoders: BTreeMap::new(),
        });
    }
    let name = args.builtin.as_deref().unwrap_or_default();
    let pick = |truth: Mdp, wrong: Mdp, pi_d: Policy| Resolved {
        model: match args.model {
            Which::Truth => truth.clone(),
            Which::Wrong => wrong,
        },
        truth: Some(truth),
        pi_d,
        encoders: BTreeMap::new(),
    };
    Ok(match name {
        "prop1" | "prop1-variant" => {
            let p_b = if name == "prop1" { 0.0 } else { args.p_b };
            let pair = build_prop1_variant(p_b)?;
            pick(pair.truth, pair.wrong, pair.pi_d)
        }
        "prop2" => {
            let pair = build_prop2(args.horizon)?;
            pick(pair.truth, pair.wrong, pair.pi_d)
        }
        "bisim-degenerate" => {
            if args.model == Which::Wrong {
                bail!("bisim-degenerate has no wrong model; pick an encoder with --encoder instead");
            }
            let inst = build_bisim_degenerate()?;
            Resolved {
                model: inst.truth.clone(),
                truth: Some(inst.truth),
                pi_d: inst.pi_d,
                encoders: [
                    ("bisim".to_string(), inst.phi_bisim),
                    ("degenerate".to_string(), inst.phi_degenerate),
                ]
                .into(),
            }
        }
        other => bail!("unknown instance {other:?}; expected one of {}", REGISTRY.join(", ")),
    })
}

pub fn read_mdp(path: &Path) -> Result<Mdp> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let json: MdpJson =
        serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))?;
    Ok(json.to_mdp()?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Dataset::read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

/// `{"state": [x, y, ...], ...}`.
pub fn read_embedding(path: &Path) -> Result<Embedding> {
    let text = std::fs::read_to_string(path).with_context(|| format!("opening {}", path.display()))?;
    let map: BTreeMap<String, Vec<f64>> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Embedding::new(map)?)
}

/// One `{"state": "latent"}` object per layer.
pub fn read_encoder(path: &Path) -> Result<Encoder> {
    let text = std::fs::read_to_string(path).with_context(|| format!("opening {}", path.display()))?;
    let layers: Vec<BTreeMap<String, String>> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Encoder::new(layers))
}
