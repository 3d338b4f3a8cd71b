//! Named random substreams.
//!
//! Every consumer of randomness (data shuffling, timestep draws, noise draws,
//! weight init, the sampler, MMD reference sets) gets its own generator,
//! keyed by a stream name hashed together with the master seed. Streams stay
//! aligned across runs that share a seed, so toggling one consumer on or off
//! cannot perturb the draws any other consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stream name; stable across platforms and releases.
fn fnv1a64(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby seed values.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the 64-bit seed for a named substream of `master`.
pub fn substream_seed(master: u64, name: &str) -> u64 {
    splitmix64(master ^ fnv1a64(name))
}

/// Generator for the named substream of `master`.
///
/// ChaCha8 is used everywhere in this crate: it produces identical streams
/// on every platform, unlike the default thread RNG.
pub fn substream(master: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master, name))
}
