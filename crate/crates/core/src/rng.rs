//! Counter-keyed random streams.
//!
//! Every draw is addressed by `(seed, stream, key...)`, so samples do not
//! depend on the order in which they are requested.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers; distinct streams never share generator state.
pub mod stream {
    pub const POLICY_INIT: u64 = 1;
    pub const INITIAL_STATE: u64 = 2;
    pub const PARAMETERS: u64 = 3;
    pub const DISTURBANCE: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const SIMULATION_START: u64 = 6;
    pub const SIMULATION_NOISE: u64 = 7;
    pub const BENCHMARK: u64 = 8;
    pub const SIMULATION_PARAMS: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the cell `(seed, stream, keys)`.
pub fn keyed(seed: u64, stream: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed ^ 0x5D58_8B65_6C07_8965);
    h = splitmix64(h ^ stream);
    for &k in keys {
        h = splitmix64(h ^ k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    rng.set_stream(stream);
    rng
}
