//! All randomness derives from one `u64` seed through named sub-streams, so
//! perturbing one consumer (say, dropout) leaves the others untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Dropout = 3,
    Shuffle = 4,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Independent generator for item `index` of a data stream (one per
/// generated sequence).
pub fn item_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5357_4453_0000_0000);
    rng.set_stream(index);
    rng
}
