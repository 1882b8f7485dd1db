//! Seed derivation for reproducible, order-independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a path of stream identifiers (step, video index,
/// purpose tag, ...) into a new 64-bit seed using the splitmix64 finalizer.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = splitmix(base ^ 0x6a09_e667_f3bc_c908);
    for &p in path {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    state
}

pub fn rng_for(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream tags used with [`derive_seed`].
pub(crate) mod stream {
    pub const CLASSIFIER_INIT: u64 = 1;
    pub const CLASSIFIER_SHUFFLE: u64 = 2;
    pub const SAMPLING: u64 = 3;
    pub const CLEANER_INIT: u64 = 4;
    pub const CLEANER_ORDER: u64 = 5;
}
