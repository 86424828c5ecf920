//! Deterministic synthetic activations: standard Gaussian values with a
//! small fraction of entries scaled up to emulate activation outliers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const OUTLIER_FRACTION: f64 = 0.01;
pub const OUTLIER_SCALE: f32 = 100.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, n: usize, std: f32) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * std).collect()
}

/// Gaussian values where each entry is independently an outlier with
/// probability [`OUTLIER_FRACTION`], multiplied by [`OUTLIER_SCALE`].
pub fn with_outliers(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v: f32 = rng.sample(StandardNormal);
            if rng.gen_bool(OUTLIER_FRACTION) {
                v * OUTLIER_SCALE
            } else {
                v
            }
        })
        .collect()
}
