//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! run seed, a purpose tag and an index, so that adding a draw in one place
//! never shifts the numbers seen anywhere else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for [`stream`].
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const BLOBS: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const PARTITION: u64 = 4;
    pub const MINIBATCH: u64 = 5;
    pub const TOPOLOGY: u64 = 6;
    pub const GROUPING: u64 = 7;
    pub const SNAPSHOT: u64 = 8;
    pub const PAIRS: u64 = 9;
    pub const MEMBERSHIP: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: u64, index: u64) -> Rng {
    let mixed = splitmix64(splitmix64(splitmix64(seed) ^ purpose) ^ index);
    ChaCha8Rng::seed_from_u64(mixed)
}
