//! Exact and Monte-Carlo machinery for studying model-learning losses in
//! model-based RL: finite MDPs, seeded datasets, the MLE / L2 / latent MLE /
//! multi-step reward-prediction losses, coverage and simulation-lemma
//! diagnostics, and self-certifying counterexample constructions.

pub mod abstraction;
pub mod counterexamples;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod mdp_core;
pub mod random;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
