//! Seeded random streams.
//!
//! Every run owns one seed. Independent consumers (initialization, minibatch
//! sampling, gradient noise, synthetic data) each draw from their own ChaCha
//! stream so that touching one never shifts the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Sampling = 2,
    Noise = 3,
    Data = 4,
}

/// The `stream` substream of the generator keyed by `seed`.
pub fn substream(seed: u64, stream: Stream) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
