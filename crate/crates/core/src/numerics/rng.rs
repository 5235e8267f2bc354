use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ApnetError, Result};

/// Seeded generator backed by ChaCha8.
///
/// ChaCha output is defined independently of word size and endianness, so the
/// same seed produces the same stream everywhere.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator for a sub-task, derived from this stream.
    pub fn child(&mut self) -> SeededRng {
        SeededRng::new(self.inner.next_u64())
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub(crate) fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// `n` distinct indices from `0..pool`, in sampling order.
pub fn sample_without_replacement(pool: usize, n: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if n > pool {
        return Err(ApnetError::InvalidArgument(format!(
            "cannot sample {n} items without replacement from a pool of {pool}"
        )));
    }
    Ok(rand::seq::index::sample(rng.inner(), pool, n).into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.uniform(0.0, 1.0).to_bits(), b.uniform(0.0, 1.0).to_bits());
        }
    }

    #[test]
    fn full_draw_is_permutation() {
        let mut rng = SeededRng::new(1);
        let mut s = sample_without_replacement(5, 5, &mut rng).unwrap();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
        assert!(sample_without_replacement(5, 0, &mut rng).unwrap().is_empty());
        assert!(sample_without_replacement(3, 4, &mut rng).is_err());
    }

    #[test]
    fn single_draws_are_uniform() {
        // chi-square with 9 dof, critical value at alpha = 0.01 is 21.666
        let mut rng = SeededRng::new(2024);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            counts[sample_without_replacement(10, 1, &mut rng).unwrap()[0]] += 1;
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 21.666, "chi2 = {chi2}, counts = {counts:?}");
    }
}
