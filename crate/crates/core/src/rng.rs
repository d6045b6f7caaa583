//! Seeded, splittable random streams and with-replacement mini-batches.
//!
//! The generator is ChaCha8 seeded from a 256-bit key expanded by SplitMix64.
//! Child streams are keyed by `(parent seed, tag, index)` only, so a child is
//! reproducible regardless of how much the parent has been advanced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

/// Purpose tags for child streams.
pub mod tags {
    pub const INSTANCE_FACTOR: u64 = 0x01;
    pub const INSTANCE_COLUMNS: u64 = 0x02;
    pub const INSTANCE_LEVELS: u64 = 0x03;
    pub const INNER_VALUE_BATCH: u64 = 0x10;
    pub const INNER_JAC_BATCH: u64 = 0x11;
    pub const OUTER_BATCH: u64 = 0x12;
    pub const LEVEL_VALUE_BATCH: u64 = 0x20;
    pub const LEVEL_JAC_BATCH: u64 = 0x21;
    pub const SNAPSHOT: u64 = 0x30;
    pub const STAGE: u64 = 0x31;
    pub const RUN: u64 = 0x40;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random stream. `(seed, draws)` identifies the state.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        RandomStream {
            seed,
            draws: 0,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of values drawn so far.
    pub fn position(&self) -> u64 {
        self.draws
    }

    /// Independent child stream for `(tag, index)`.
    pub fn child(&self, tag: u64, index: u64) -> RandomStream {
        let mut state = self.seed ^ 0xA076_1D64_78BD_642F;
        let a = splitmix64(&mut state);
        let mut state = a ^ tag.wrapping_mul(0xE703_7ED1_A0B4_28DB);
        let b = splitmix64(&mut state);
        let mut state = b ^ index.wrapping_mul(0x8EBC_6AF0_9C88_C6E3);
        RandomStream::new(splitmix64(&mut state))
    }

    /// Uniform draw from `0..n`.
    pub fn uniform_index(&mut self, n: usize) -> usize {
        self.draws += 1;
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.draws += 1;
        StandardNormal.sample(&mut self.rng)
    }

    pub fn uniform01(&mut self) -> f64 {
        self.draws += 1;
        self.rng.random::<f64>()
    }

    fn binomial(&mut self, trials: u64, p: f64) -> u64 {
        self.draws += 1;
        if trials == 0 || p <= 0.0 {
            return 0;
        }
        if p >= 1.0 {
            return trials;
        }
        Binomial::new(trials, p)
            .expect("probability in (0, 1)")
            .sample(&mut self.rng)
    }
}

/// `size` i.i.d. uniform draws from `0..n`, duplicates allowed.
pub fn sample_indices(stream: &mut RandomStream, n: usize, size: usize) -> Vec<usize> {
    assert!(n >= 1, "cannot sample from an empty index set");
    (0..size).map(|_| stream.uniform_index(n)).collect()
}

/// A with-replacement mini-batch stored as `(index, multiplicity)` pairs in
/// increasing index order.
///
/// Estimators only depend on the multiset of drawn indices, so a batch larger
/// than the population is drawn directly as a multinomial count vector, which
/// has the same distribution as `size` individual draws.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    entries: Vec<(usize, u64)>,
    size: u64,
}

impl MiniBatch {
    pub fn from_indices(indices: &[usize]) -> Self {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        let mut entries: Vec<(usize, u64)> = Vec::new();
        for idx in sorted {
            match entries.last_mut() {
                Some((last, count)) if *last == idx => *count += 1,
                _ => entries.push((idx, 1)),
            }
        }
        MiniBatch {
            entries,
            size: indices.len() as u64,
        }
    }

    /// Every index in `0..n` exactly once.
    pub fn full(n: usize) -> Self {
        MiniBatch {
            entries: (0..n).map(|i| (i, 1)).collect(),
            size: n as u64,
        }
    }

    pub fn entries(&self) -> &[(usize, u64)] {
        &self.entries
    }

    /// Number of draws, counting duplicates.
    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|&(i, _)| i)
    }
}

/// With-replacement mini-batch of `size` draws from `0..n`.
pub fn sample_batch(stream: &mut RandomStream, n: usize, size: u64) -> MiniBatch {
    assert!(n >= 1, "cannot sample from an empty index set");
    if size <= 4 * n as u64 {
        return MiniBatch::from_indices(&sample_indices(stream, n, size as usize));
    }
    // sequential conditional binomials
    let mut entries = Vec::with_capacity(n);
    let mut remaining = size;
    for i in 0..n {
        let count = if i + 1 == n {
            remaining
        } else {
            stream.binomial(remaining, 1.0 / (n - i) as f64)
        };
        if count > 0 {
            entries.push((i, count));
        }
        remaining -= count;
        if remaining == 0 {
            break;
        }
    }
    MiniBatch { entries, size }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sample() {
        let mut s = RandomStream::new(1);
        assert!(sample_indices(&mut s, 10, 0).is_empty());
    }

    #[test]
    fn single_outcome() {
        let mut s = RandomStream::new(2);
        assert_eq!(sample_indices(&mut s, 1, 5), vec![0; 5]);
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = RandomStream::new(42);
        let mut b = RandomStream::new(42);
        assert_eq!(
            sample_indices(&mut a, 100, 50),
            sample_indices(&mut b, 100, 50)
        );
        assert_eq!(a.position(), 50);
        let c1 = a.child(tags::OUTER_BATCH, 7);
        let c2 = RandomStream::new(42).child(tags::OUTER_BATCH, 7);
        assert_eq!(c1.seed(), c2.seed());
        assert_ne!(c1.seed(), a.child(tags::OUTER_BATCH, 8).seed());
        assert_ne!(c1.seed(), a.child(tags::INNER_VALUE_BATCH, 7).seed());
    }

    #[test]
    fn batch_multiplicities() {
        let b = MiniBatch::from_indices(&[3, 1, 3, 0, 3]);
        assert_eq!(b.entries(), &[(0, 1), (1, 1), (3, 3)]);
        assert_eq!(b.size(), 5);
    }

    #[test]
    fn multinomial_batch_conserves_size() {
        let mut s = RandomStream::new(9);
        let b = sample_batch(&mut s, 7, 1_000_000_000_000);
        assert_eq!(b.size(), 1_000_000_000_000);
        assert_eq!(b.entries().iter().map(|e| e.1).sum::<u64>(), b.size());
        for &(_, c) in b.entries() {
            let frac = c as f64 / 1e12;
            assert!((frac - 1.0 / 7.0).abs() < 1e-4);
        }
    }
}
