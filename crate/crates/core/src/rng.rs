//! Seeded random streams.
//!
//! Every stochastic component takes its own `ChaCha8Rng`. Independent streams
//! are derived from a master seed with [`derive_seed`], a SplitMix64 finalizer
//! applied to `master + stream * GOLDEN`, so a stream's values depend only on
//! `(master, stream)` and never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 mix of `(master, stream)`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Matrix of i.i.d. `N(0, std^2)` entries.
pub fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * standard_normal(rng))
}
