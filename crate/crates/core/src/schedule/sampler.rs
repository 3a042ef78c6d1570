//! Seeded epoch shuffling shared by every schedule, so paired runs consume
//! identical batch sequences.

use rand::rngs::StdRng;
use rand::Rng;

use crate::rng::{stream_rng, streams};

/// Yields fixed-size index batches from reshuffled epochs. A trailing
/// partial epoch is dropped rather than emitting a short batch.
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: StdRng,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        assert!(batch_size >= 1 && batch_size <= n, "batch size {batch_size} for {n} samples");
        let mut sampler = BatchSampler {
            n,
            batch_size,
            order: (0..n).collect(),
            pos: 0,
            rng: stream_rng(seed, streams::BATCH_SAMPLER, 0),
        };
        sampler.reshuffle();
        sampler
    }

    fn reshuffle(&mut self) {
        for i in (1..self.n).rev() {
            let j = self.rng.gen_range(0..=i);
            self.order.swap(i, j);
        }
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch_size > self.n {
            self.reshuffle();
        }
        let batch = self.order[self.pos..self.pos + self.batch_size].to_vec();
        self.pos += self.batch_size;
        batch
    }
}
