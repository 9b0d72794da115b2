//! Reproducible noise streams.
//!
//! Every stochastic run derives its randomness from a master seed plus a
//! stream index, so ensembles are reproducible and independent of execution
//! order: trajectory `i` always sees the same increments no matter how many
//! workers are running.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Counter-based stream: ChaCha12 keyed by the master seed, with the stream
/// index selecting a disjoint keystream.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(stream.into());
    rng
}

/// One `N(0, dt)` Wiener increment.
#[inline]
pub fn wiener(rng: &mut ChaCha12Rng, dt: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * dt.sqrt()
}
