//! Seed derivation for independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_TASK: u64 = 0x7461_736b;
pub(crate) const STREAM_PROMPT: u64 = 0x7072_6f6d;
pub(crate) const STREAM_SHUFFLE: u64 = 0x7368_7566;
pub(crate) const STREAM_PROBE: u64 = 0x7072_6f62;
pub(crate) const STREAM_DIRECTIONS: u64 = 0x6469_7273;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a user seed with a stream tag and an index into a new 64-bit seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

/// A ChaCha8 generator for `(seed, stream, index)`. ChaCha output is
/// platform-independent, which keeps every artifact replayable.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
