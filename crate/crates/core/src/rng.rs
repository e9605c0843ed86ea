//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed. Independent parts of
//! one computation draw from distinct ChaCha streams of the same seed, so adding
//! draws to one part never shifts the numbers another part sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// A generator for `seed` on stream `stream`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a seed with an index (splitmix64 finalizer) to derive child seeds.
pub fn derive(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) mod streams {
    pub const SHUFFLE: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SAMPLER: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const PROPOSAL: u64 = 5;
    pub const MC: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const ORACLE: u64 = 9;
}
