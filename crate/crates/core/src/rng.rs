//! Seed derivation.
//!
//! Every random quantity in the crate is driven by a ChaCha8 stream keyed by a
//! 64-bit seed. Child seeds are derived from a parent seed and an index (or a
//! textual task path) through the SplitMix64 finalizer, so replications can run
//! in any order or on any thread and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child stream of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index ^ 0x5851_F42D_4C95_7F2D))
}

/// Seed of the child stream named by `path`: FNV-1a over the UTF-8 bytes of
/// the path, then [`derive_seed`].
pub fn derive_seed_path(master: u64, path: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in path.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    derive_seed(master, h)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
