//! Deterministic noise streams keyed by (seed, realization, channel).
//!
//! Every stream is an independent ChaCha8 sequence, so a realization draws
//! the same numbers no matter which worker generates it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Noise channels used by the generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Channel {
    ProcessX = 0,
    ProcessY = 1,
    ShotX = 2,
    ShotY = 3,
    Carrier = 4,
    Initial = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngKey {
    pub seed: u64,
    pub realization: u64,
}

impl RngKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, realization: 0 }
    }

    pub fn realization(self, realization: u64) -> Self {
        Self { realization, ..self }
    }

    pub fn stream(&self, channel: Channel) -> NormalStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // 2^8 channels per realization
        rng.set_stream((self.realization << 8) | channel as u64);
        NormalStream { rng }
    }
}

pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    /// Standard normal deviate.
    pub fn next(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}
