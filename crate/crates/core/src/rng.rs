//! Seeded randomness.
//!
//! Every random draw in the crate comes from [`ChaCha8Rng`], whose output
//! stream is fixed by its algorithm and identical on every platform. Child
//! seeds (one per replication, per fold, per design parameter block) are
//! derived with the SplitMix64 finalizer so that nearby indices map to
//! unrelated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A 64-bit seed for the project-wide generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Child seed for stream `index`: `splitmix64(seed ^ splitmix64(index + 1))`.
    pub fn derive(self, index: u64) -> RngSeed {
        RngSeed(splitmix64(self.0 ^ splitmix64(index.wrapping_add(1))))
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed(seed)
    }
}

/// SplitMix64 output function (Steele, Lea & Flood constants).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
