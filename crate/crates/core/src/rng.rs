//! Seeded random streams. Every random quantity in a run derives from the
//! scenario seed through a named substream, so runs replay exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Arrivals = 1,
    OffloadDraws = 2,
    Oracle = 3,
    Penalty = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a list of words into one well-mixed 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, which as u64]))
}

/// Generator keyed by the seed, a stream and extra coordinates, e.g. a
/// (datum, stage) pair. The same key always yields the same sequence.
pub fn keyed(seed: u64, which: Stream, coords: &[u64]) -> ChaCha8Rng {
    let mut words = Vec::with_capacity(coords.len() + 2);
    words.push(seed);
    words.push(which as u64);
    words.extend_from_slice(coords);
    ChaCha8Rng::seed_from_u64(mix(&words))
}
