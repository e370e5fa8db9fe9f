//! Finite MDPs, policies, value functions, occupancy measures and planning.

mod deterministic;
mod distribution;
mod eval;
mod json;
mod mdp;
mod occupancy;
mod policy;

pub use deterministic::DeterministicModel;
pub use distribution::{cross_entropy_parts, Distribution, PROB_TOLERANCE};
pub use eval::{
    expected_return, occupancy, plan_optimal, validate, value_function, ValueFunction, Violation,
    MAX_ITERATIONS, OCCUPANCY_TAIL, VALUE_TOLERANCE,
};
pub use json::{LayerJson, MdpJson};
pub use mdp::{Mdp, MdpBuilder, MdpKind, Oracle, StateSpace, ENUMERATION_LIMIT};
pub use occupancy::Occupancy;
pub use policy::Policy;
