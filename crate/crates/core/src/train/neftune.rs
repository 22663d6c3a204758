use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::Scalar;

/// Bound on every noise entry: `alpha / sqrt(len * dim)`.
pub fn neftune_bound(len: usize, dim: usize, alpha: f64) -> f64 {
    alpha / ((len * dim) as f64).sqrt()
}

/// Noise entries drawn uniformly from `(-1, 1)` and scaled by
/// [`neftune_bound`].
pub fn neftune_epsilon(
    n: usize,
    len: usize,
    dim: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let scale = neftune_bound(len, dim, alpha);
    (0..n)
        .map(|_| rng.random_range(-1.0..1.0) * scale)
        .collect()
}

pub(crate) fn add_neftune_noise<T: Scalar>(
    x: &mut [T],
    len: usize,
    dim: usize,
    alpha: f64,
    rng: &mut impl Rng,
) {
    if alpha == 0.0 {
        return;
    }
    let eps = neftune_epsilon(x.len(), len, dim, alpha, rng);
    for (v, e) in x.iter_mut().zip(eps) {
        *v = *v + T::lit(e);
    }
}

/// Embeddings `[len × dim]` plus seeded NEFTune noise. `alpha = 0` returns
/// the input unchanged.
pub fn neftune_noise<T: Scalar>(
    embeddings: &[T],
    len: usize,
    dim: usize,
    alpha: f64,
    seed: u64,
) -> Vec<T> {
    let mut out = embeddings.to_vec();
    add_neftune_noise(
        &mut out,
        len,
        dim,
        alpha,
        &mut ChaCha8Rng::seed_from_u64(seed),
    );
    out
}
