//! Counter-split random streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(seed, domain, path)`, e.g. `(seed, ROLLOUT, [trajectory, layer])`, so the
//! value of any item is independent of how many other items were generated or
//! in which order (and of thread scheduling).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TUPLES: u64 = 0x7475_706c;
pub const TRAJECTORIES: u64 = 0x7472_616a;
pub const ROLLOUTS: u64 = 0x726f_6c6c;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent generator for item `path` of `domain` under `seed`.
pub fn stream(seed: u64, domain: u64, path: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain)));
    let id = path
        .iter()
        .fold(splitmix64(domain), |acc, &p| splitmix64(acc ^ p));
    rng.set_stream(id);
    rng
}

/// Uniform draw in `[0, 1)`.
pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen::<f64>()
}

/// Inverse-CDF draw of an index from `weights` (assumed to sum to ~1);
/// zero-weight entries are never selected.
pub fn sample_index(weights: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        cum += w;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}
