//! Seedable counter-based random streams.
//!
//! Every sampler takes an explicit generator. Independent streams are
//! derived from a base seed and a stream id so that work split by time
//! index or site can be reproduced regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for `(seed, stream)`. Distinct stream ids never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a two-level stream key, e.g. (purpose, time index) or (site, block).
pub fn stream_id(major: u32, minor: u32) -> u64 {
    ((major as u64) << 32) | minor as u64
}
