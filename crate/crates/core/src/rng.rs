//! Counter-style RNG streams keyed by (seed, coordinates), so a rollout's
//! randomness depends only on where it sits in the experiment and not on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit identifier of the stream at `coords` under `seed`.
pub fn stream_id(seed: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(seed: u64, coords: &[u64]) -> (ChaCha8Rng, u64) {
    let id = stream_id(seed, coords);
    (ChaCha8Rng::seed_from_u64(id), id)
}
