//! Per-trial random substreams.
//!
//! Every trial owns a stream keyed by `(seed, trial_index)`, so results do not
//! depend on evaluation order or worker count. The stream's first word is a
//! cheap gate uniform used to skip quiet trials; anything beyond that comes
//! from a ChaCha8 generator seeded from the same key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialStream {
    key: u64,
}

impl TrialStream {
    pub fn new(seed: u64, trial_index: u64) -> Self {
        Self {
            key: splitmix64(seed ^ splitmix64(trial_index ^ 0x6A09_E667_F3BC_C908)),
        }
    }

    /// Uniform in [0, 1).
    pub fn gate(&self) -> f64 {
        to_unit(splitmix64(self.key))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(splitmix64(self.key ^ GOLDEN))
    }
}

/// Seed for the `index`-th point of a sweep.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(splitmix64(index.wrapping_add(0xBB67_AE85_84CA_A73B))))
}
