//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 seeded with a 64-bit
//! master seed. Independent sub-streams (per sample, per batch, per
//! operator) are obtained by selecting a ChaCha stream id, so the sequence
//! is identical on every platform and does not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream 0 of the master seed.
pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the master seed.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Mixes a seed with a path of indices into a stream id (splitmix64 steps).
pub fn derive(seed: u64, path: &[u64]) -> Rng {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in path {
        h = splitmix(h ^ p);
    }
    stream(seed, h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
