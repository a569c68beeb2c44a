//! Seeded, platform-independent random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type ExpRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> ExpRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent child stream; `tag` separates consumers of the same parent seed.
pub fn derive(seed: u64, tag: u64) -> ExpRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(tag);
    r
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}
