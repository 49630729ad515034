//! Counter-keyed random streams.
//!
//! Every random draw in a simulation is taken from a ChaCha stream whose key is
//! the tuple `(seed, client, round, step)`, so results do not depend on the
//! order in which clients are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn keyed_rng(seed: u64, client: u64, round: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&client.to_le_bytes());
    key[16..24].copy_from_slice(&round.to_le_bytes());
    key[24..32].copy_from_slice(&step.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Named sub-streams so that unrelated consumers of one user seed never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split = 1,
    Partition = 2,
    Horizons = 3,
    Variance = 4,
    Synthetic = 5,
    Probe = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    keyed_rng(seed, u64::MAX - stream as u64, 0, 0)
}

/// One standard normal draw.
pub fn gauss<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}
