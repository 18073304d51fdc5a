//! Named, reproducible random substreams.
//!
//! All randomness in an experiment flows from one top-level seed; components
//! derive their own generator from `(seed, name)` so that, for example, path
//! simulation and saddle perturbations stay reproducible independently of
//! each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a, pinned here so stream derivation never changes across toolchains.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a substream seed from a top-level seed and a component name.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    seed ^ fnv1a64(name.as_bytes())
}

/// Generator for a named substream.
pub fn rng_for(seed: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(substream_seed(seed, name))
}

/// Generator for one indexed lane (e.g. one sample path) of a named
/// substream. Lane k is reproducible regardless of how many lanes exist.
pub fn rng_for_lane(seed: u64, name: &str, lane: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(substream_seed(seed, name));
    rng.set_stream(lane.wrapping_add(1));
    rng
}
