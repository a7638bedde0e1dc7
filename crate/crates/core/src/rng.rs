//! Seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(root seed, purpose tag, index)`. The key is mixed with SplitMix64:
//!
//! ```text
//! h = mix(root ^ 0x9E3779B97F4A7C15)
//! for byte in tag: h = mix(h ^ byte)
//! seed = mix(h ^ index)
//! ```
//!
//! Work split across threads by index therefore draws the same numbers as a
//! serial loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix(root ^ 0x9E37_79B9_7F4A_7C15);
    for b in tag.bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ index)
}

pub fn stream(root: u64, tag: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag, index))
}

pub fn normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}
