//! Seeded random streams.
//!
//! Every consumer of randomness derives its generator from a user seed plus a
//! fixed stream id, so that e.g. weight initialization and data noise drawn
//! from the same seed stay independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_LHS: u64 = 3;
pub const STREAM_DROPOUT: u64 = 4;
pub const STREAM_HMC: u64 = 5;
pub const STREAM_MC_PASSES: u64 = 6;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
