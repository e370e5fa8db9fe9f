//! State abstractions: encoders, induced latent models, bisimulation checks,
//! the latent MLE loss and exhaustive encoder search.

mod encoder;
mod latent;
mod search;

pub use encoder::{Encoder, EncoderLayer};
pub use latent::{
    bisimulation_check, expected_latent_mle_loss, fit_latent_model, induced_abstract_kernel, is_kernel_homogeneous,
    latent_mle_loss, lift_policy, optimal_latent_dynamics, BisimCheck, LatentModel, LatentRow, Witness, WitnessKind,
    BISIM_TOLERANCE,
};
pub use search::{search_encoders, EncoderScore, MAX_SEARCH_CANDIDATES, MAX_SEARCH_STATES};
