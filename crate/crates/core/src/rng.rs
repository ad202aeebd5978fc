//! Named random substreams derived from one root seed.
//!
//! A stream is addressed by `(root, tag, index)`. Streams for different tags or
//! indices are unrelated, so adding an experiment cell never changes the draws
//! of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed of the substream `(root, tag, index)`.
pub fn substream_seed(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ splitmix64(fnv1a(tag))) ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Generator for the substream `(root, tag, index)`.
pub fn substream(root: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(root, tag, index))
}
