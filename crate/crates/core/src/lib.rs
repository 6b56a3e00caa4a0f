//! Temperature-controlled SGD on the margin hinge loss for perceptrons and
//! small ReLU networks, with the extreme-value predictions and scaling-law
//! fits used to analyse the runs.

pub mod data;
pub mod error;
pub mod evt;
#[cfg(feature = "idx")]
pub mod idx;
pub mod linalg;
pub mod mlp;
pub mod perceptron;
pub mod plot;
pub mod scaling;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable 64-bit mix of a base seed and an index (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
