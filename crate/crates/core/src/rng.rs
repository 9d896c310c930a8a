//! Seeded randomness. Every stochastic routine takes a `u64` seed and draws
//! from ChaCha8, whose stream is fixed across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Matrix;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed for a named sub-stream, so that e.g. the
/// topology and the features of a generated graph do not share draws.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gaussian_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

pub fn uniform_matrix(rng: &mut SeededRng, rows: usize, cols: usize, bound: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}
