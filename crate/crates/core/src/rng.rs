//! Seeded random streams.
//!
//! Every stochastic component draws from [`ChaCha8Rng`], a counter-based
//! generator. A `(seed, stream)` pair identifies an independent sequence: the
//! seed keys the cipher and the stream id selects the nonce, so stream `k`
//! never overlaps stream `j != k` for the same seed. Trajectory `k` of a
//! simulation uses stream `k`; other consumers use the fixed ids below.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Stream ids reserved for non-trajectory consumers.
pub mod streams {
    pub const INIT: u64 = 1 << 40;
    pub const SUBSAMPLE: u64 = (1 << 40) + 1;
    pub const TRAIN: u64 = (1 << 40) + 2;
    pub const COLLOCATION: u64 = (1 << 40) + 3;
    pub const LANGEVIN: u64 = (1 << 40) + 4;
}

/// Generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
