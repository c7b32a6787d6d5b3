//! Seeded random streams.
//!
//! Every source of randomness hangs off one root seed. A named stream is a
//! ChaCha8 generator whose seed is a SplitMix64 mix of the root seed and the
//! stream name, so adding a stream never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every stream.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a stream name.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(root) ^ h)
}

/// Derives a child seed from `root`, a stream name and an index.
pub fn derive_indexed(root: u64, name: &str, index: u64) -> u64 {
    splitmix64(derive_seed(root, name) ^ splitmix64(index))
}

/// Opens the named stream under `root`.
pub fn stream(root: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, name))
}

/// Opens the `index`-th instance of the named stream under `root`.
pub fn indexed_stream(root: u64, name: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_indexed(root, name, index))
}
