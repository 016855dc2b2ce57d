//! Seeded random streams.
//!
//! Every stochastic operation draws from a stream identified by a
//! `(seed, path)` pair. The path names the purpose and the index of the
//! consumer (for example `[stream::INIT, chain]`), so a chain's draws do not
//! depend on how chains are batched or scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

pub mod stream {
    pub const INIT: u64 = 1;
    pub const ANCESTRAL: u64 = 2;
    pub const DATA: u64 = 3;
    pub const PROJECTIONS: u64 = 4;
    pub const PERTURB: u64 = 5;
    pub const TRAIN: u64 = 6;
    pub const MLP_INIT: u64 = 7;
    pub const BASELINE: u64 = 8;
    pub const REFERENCE: u64 = 9;
    pub const DATASET: u64 = 10;
    pub const EVAL: u64 = 11;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a stream path into a single ChaCha stream id.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x005E_ED0F_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Random source for `(seed, path)`.
pub fn stream_rng(seed: u64, path: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(path));
    rng
}

pub fn fill_standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    fill_standard_normal(rng, &mut v);
    v
}
