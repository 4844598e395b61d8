//! Seeded, stream-split randomness.
//!
//! Every random phase of a run (weight init, batch selection, mixup
//! coefficients, penalty pair sampling, enforcement group draws, data
//! generation) pulls from its own ChaCha stream, so consuming randomness
//! in one phase never perturbs another.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers, one per independent randomness consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    WeightInit,
    BatchSelect,
    MixCoeff,
    PenaltyPairs,
    Enforcement,
    DataGen,
    SplitShuffle,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::WeightInit => 0,
            Stream::BatchSelect => 1,
            Stream::MixCoeff => 2,
            Stream::PenaltyPairs => 3,
            Stream::Enforcement => 4,
            Stream::DataGen => 5,
            Stream::SplitShuffle => 6,
        }
    }
}

/// Builds the RNG for one (seed, stream) pair.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Fisher-Yates sample of `count` distinct items from `pool`, in draw order.
/// Leaves `pool` permuted; callers pass a scratch copy.
pub fn sample_without_replacement(
    pool: &mut [usize],
    count: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    assert!(count <= pool.len());
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
        out.push(pool[i]);
    }
    out
}

/// Sample of `count` items from `pool` with replacement.
pub fn sample_with_replacement(pool: &[usize], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(!pool.is_empty());
    (0..count).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
}
