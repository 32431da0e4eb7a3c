//! Hierarchical seed derivation: one root seed fans out to every component
//! through named, indexed child streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Child seed for stream `(tag, index)` under `parent`.
pub fn derive(parent: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ fnv1a(tag)).wrapping_add(index))
}

pub fn rng(parent: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, tag, index))
}
