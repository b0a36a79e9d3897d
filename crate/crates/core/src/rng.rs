//! Seeded random streams. Every stream is a pure function of its key, so
//! results never depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with any number of integer keys.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix(base), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn stream(base: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, keys))
}

/// Stream for one sample in one epoch; `purpose` separates independent uses.
pub fn sample_stream(base: u64, epoch: u64, sample_id: u64, purpose: u64) -> ChaCha8Rng {
    stream(base, &[epoch, sample_id, purpose])
}
