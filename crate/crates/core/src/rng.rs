//! Named generator sub-streams derived from one campaign seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Sub-stream identifiers. Each one gets an independent ChaCha stream keyed
/// by the same campaign seed, so adding draws to one stream never perturbs
/// another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Mutation = 1,
    Sampling = 2,
    Noise = 3,
    Covert = 4,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// A fresh generator for a numbered child of a stream, e.g. one per backend
/// execution.
pub fn child(seed: u64, which: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(which as u64);
    rng
}
