//! Seeded randomness helpers. Every stochastic operation in the crate takes an
//! explicit RNG so runs replay bit-identically.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Prng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Prng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// One draw from N(0, 1).
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// A vector of iid N(0, 1) draws.
pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// A vector of iid U(lo, hi) draws.
pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
