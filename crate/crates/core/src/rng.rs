//! Deterministic RNG stream derivation.
//!
//! Every (seed, worker, iteration) triple gets its own ChaCha stream, so
//! results do not depend on how worker tasks are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the three coordinates into a single 64-bit stream key.
pub fn stream_key(seed: u64, worker: u64, iteration: u64) -> u64 {
    let a = splitmix64(seed);
    let b = splitmix64(a ^ worker.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ iteration.wrapping_mul(0xA076_1D64_78BD_642F))
}

pub fn stream_rng(seed: u64, worker: u64, iteration: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, worker, iteration))
}

/// Per-run RNG stream factory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStreams {
    pub seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn for_worker(&self, worker: usize, iteration: usize) -> StreamRng {
        stream_rng(self.seed, worker as u64, iteration as u64)
    }
}
