//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator
//! derived from one run-level seed and a stream name.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent sub-seed for the stream `name`.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded into the seed with a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, name))
}
