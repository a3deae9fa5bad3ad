//! Reproducible random streams.
//!
//! Every Monte Carlo trial (or Lyapunov replicate) `i` draws from ChaCha8
//! keyed by the master seed, with stream id `i`. ChaCha is counter based, so
//! stream `i` is the same sequence no matter which worker runs it or in which
//! order, and results do not depend on the size of the thread pool.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed used when none is given. Never derived from the clock.
pub const DEFAULT_SEED: u64 = 20_241_017;

pub type StreamRng = ChaCha8Rng;

/// Independent generator for work item `index` under `master_seed`.
pub fn stream(master_seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}
