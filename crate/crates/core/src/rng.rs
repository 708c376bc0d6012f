//! Seeded random streams.
//!
//! Nothing in the crate touches a global RNG; every randomized routine takes a
//! seed or a generator. Independent sub-experiments derive their own stream from
//! `(seed, label, index)` so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for a plain seed.
pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Isolated stream keyed by `(seed, label, index)`.
pub fn stream(seed: u64, label: &str, index: u64) -> Rng {
    let key = splitmix(seed ^ fnv1a(label.as_bytes()));
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(key ^ splitmix(index)));
    rng.set_stream(index);
    rng
}
