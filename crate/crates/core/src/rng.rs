//! Seeded, role-addressed random streams.
//!
//! A stream is identified by `(seed, stream_id, epoch)`. The same triple yields
//! the same values in every process, which is what lets a slave on another
//! machine replay exactly the draws an in-process slave would have made.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Stream id used by the master (initialization, recombination).
pub const MASTER_STREAM: u64 = 0;

/// Stream id reserved for problem generation.
pub const PROBLEM_STREAM: u64 = u64::MAX;

/// Each epoch owns 2^32 words of keystream.
const EPOCH_SHIFT: u32 = 32;

/// Stream id of the adaptation pair starting at population position
/// `2 * pair`. Keying draws by pair rather than by slave makes every block
/// layout replay the same numbers.
pub fn pair_stream(pair: usize) -> u64 {
    pair as u64 + 1
}

/// Stream id of the first pair of a block starting at population `offset`.
pub fn block_stream(offset: usize) -> u64 {
    pair_stream(offset / 2)
}

/// Epoch used for a given 0-based generation. Epoch 0 is initialization.
pub fn generation_epoch(t: u64) -> u64 {
    t + 1
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self::at_epoch(seed, stream_id, 0)
    }

    /// Positions the stream at the start of `epoch`.
    ///
    /// Epochs must stay below 2^32 so the word position fits the 68-bit
    /// ChaCha counter.
    pub fn at_epoch(seed: u64, stream_id: u64, epoch: u64) -> Self {
        assert!(epoch < (1 << 32), "epoch {epoch} out of range");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        rng.set_word_pos(u128::from(epoch) << EPOCH_SHIFT);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on `[lo, hi)`. Returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.rng.random_range(lo..hi)
    }

    /// Uniform draw on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn gaussian(&mut self, mean: f64, sd: f64) -> f64 {
        Normal::new(mean, sd)
            .expect("standard deviation must be finite and non-negative")
            .sample(&mut self.rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}
