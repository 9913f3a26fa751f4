//! Deterministic random streams.
//!
//! All randomness in the workspace flows from a single global seed. Module
//! seeds are derived by hashing the global seed together with a stream label
//! (round id, client id, sweep cell, ...), so independent consumers get
//! independent streams and results are reproducible across processes and
//! independent of execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based stream used everywhere randomness is needed.
pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a sequence of labels.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    let mut state = splitmix64(seed ^ 0x45474131); // "EGA1"
    for &label in labels {
        state = splitmix64(state ^ splitmix64(label));
    }
    state
}

/// Seeded stream for a labeled consumer.
pub fn stream(seed: u64, labels: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, labels))
}
