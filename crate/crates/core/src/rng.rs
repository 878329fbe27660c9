//! Seeded, splittable random streams.
//!
//! Work is cut into fixed-size blocks and block `b` always draws from stream
//! `b` of the run's seed, so results do not depend on how many threads run
//! the blocks or in which order.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Trials per independently seeded block.
pub const BLOCK_SIZE: usize = 4096;

/// The generator for stream `index` of `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Splits `0..trials` into blocks and maps each block, with its own stream,
/// in parallel. Results come back in block order.
pub fn par_blocks<T, F>(seed: u64, trials: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, Range<usize>) -> T + Sync,
{
    let blocks = trials.div_ceil(BLOCK_SIZE);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK_SIZE;
            let end = (start + BLOCK_SIZE).min(trials);
            f(&mut stream(seed, b as u64), start..end)
        })
        .collect()
}
