//! Deterministic, order-free random-number streams.
//!
//! All simulation randomness derives from a ChaCha8 generator keyed by a master
//! seed. Logical streams (one per replication, one per multilevel level) map to
//! distinct ChaCha stream counters, so any subset of work can execute in any
//! order — or in parallel — and still consume exactly the same random numbers.
//!
//! Stream-id layout: replication `i` owns the 256-id block starting at
//! `(i + 1) << 8`; level `ℓ` within a run uses `base + ℓ`. Id 0 is never used,
//! which keeps ad-hoc `seed_from_u64` generators (stream 0) disjoint from
//! harness streams.

use rand::SeedableRng;

/// The concrete RNG driving every sampler in this crate.
pub type StreamRng = rand_chacha::ChaCha8Rng;

/// Number of stream ids reserved per replication (one per multilevel level).
pub const STREAMS_PER_REPLICATION: u64 = 256;

/// Generator keyed by `seed` on the default stream.
pub fn master_rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Base stream id owned by replication `replication`.
pub fn replication_stream(replication: u64) -> u64 {
    (replication + 1)
        .checked_mul(STREAMS_PER_REPLICATION)
        .expect("replication index out of range")
}

/// Generator keyed by `seed` positioned on stream `stream`.
pub fn rng_for_stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = master_rng(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for level `level`, derived from a base generator's identity
/// (its seed and stream id). The base's consumption position is irrelevant:
/// the derived stream always starts at its own origin.
pub fn level_rng(base: &StreamRng, level: u32) -> StreamRng {
    let mut rng = StreamRng::from_seed(base.get_seed());
    rng.set_stream(
        base.get_stream()
            .checked_add(u64::from(level))
            .expect("level stream id overflow"),
    );
    rng
}
