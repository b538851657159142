//! Named random substreams.
//!
//! Every stochastic component (cohort synthesis, initialization, dropout,
//! fold assignment, bootstrap) draws from its own stream derived from the
//! single run seed, so each can be reproduced in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream `name` / `index` of run `seed`.
pub fn substream(seed: u64, name: &str, index: u64) -> Rng {
    let key = splitmix(seed ^ splitmix(fnv1a(name) ^ splitmix(index)));
    ChaCha8Rng::seed_from_u64(key)
}
