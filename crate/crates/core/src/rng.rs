//! Reproducible random streams.
//!
//! Every consumer of randomness derives its own ChaCha8 stream from a
//! `(seed, stream id)` pair. ChaCha is counter based, so the output depends
//! only on the key, the stream id and the word position; it is identical
//! across platforms and independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Role tags keep streams of one sequence disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum StreamRole {
    Placement = 1,
    Motion = 2,
    Noise = 3,
    Init = 4,
    Shuffle = 5,
    Signal = 6,
    MonteCarlo = 7,
}

/// Build the stream for `(seed, index, role)`.
pub fn stream(seed: u64, index: u64, role: StreamRole) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index << 8) | role as u64);
    rng
}
