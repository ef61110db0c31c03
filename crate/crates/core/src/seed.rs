//! Seed derivation.
//!
//! Every stochastic step in an audit draws from its own substream, keyed by
//! `(master seed, run index, purpose)`. Substreams never depend on the order
//! in which runs are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

/// What a derived seed is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeedPurpose {
    /// Drawing a training subsample.
    Sampling,
    /// Parameter initialization.
    Init,
    /// Mini-batch ordering.
    Batching,
    /// Simulated population draw.
    Population,
    /// Held-out test set draw (simulated) or split (ingested).
    TestSet,
}

impl SeedPurpose {
    fn tag(self) -> u64 {
        match self {
            SeedPurpose::Sampling => 0x5A4D_504C_0000_0001,
            SeedPurpose::Init => 0x494E_4954_0000_0002,
            SeedPurpose::Batching => 0x4241_5443_0000_0003,
            SeedPurpose::Population => 0x504F_5055_0000_0004,
            SeedPurpose::TestSet => 0x5445_5354_0000_0005,
        }
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, run_index: usize, purpose: SeedPurpose) -> u64 {
    let mut h = mix64(master ^ 0x9E37_79B9_7F4A_7C15);
    h = mix64(h ^ (run_index as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    mix64(h ^ purpose.tag())
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
