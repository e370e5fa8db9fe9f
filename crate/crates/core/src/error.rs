use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown state {state:?} at layer {layer}")]
    UnknownState { layer: usize, state: String },

    #[error("action index {0} out of range")]
    UnknownAction(usize),

    #[error("policy is not defined at state {state:?} (layer {layer})")]
    PolicyUndefined { layer: usize, state: String },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("operation requires {expected} MDP")]
    KindMismatch { expected: &'static str },

    #[error("state/action space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("reward mismatch at layer {layer}, state {state:?}, action {action}: {left} vs {right}")]
    RewardMismatch {
        layer: usize,
        state: String,
        action: usize,
        left: f64,
        right: f64,
    },

    #[error("iteration did not converge within {iterations} sweeps")]
    NotConverged { iterations: usize },

    #[error("{what} too large to enumerate: {size} exceeds limit {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no embedding for state {0:?}")]
    MissingEmbedding(String),

    #[error("encoder does not map state {state:?} at layer {layer}")]
    Unencoded { layer: usize, state: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("certificate {name} failed: expected {expected}, computed {computed}")]
    CertificateMismatch {
        name: String,
        expected: f64,
        computed: f64,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
