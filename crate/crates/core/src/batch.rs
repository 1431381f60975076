//! Index batches drawn without replacement.

use rand::Rng;

/// Partial Fisher-Yates over a persistent permutation of `0..n`. A batch of
/// size `B` costs `O(B)` random draws and can be grown in place.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    perm: Vec<usize>,
    len: usize,
}

impl BatchSampler {
    pub fn new(n: usize) -> Self {
        BatchSampler {
            perm: (0..n).collect(),
            len: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// Fresh uniform batch of `size` distinct indices (clamped to `n`).
    pub fn draw<R: Rng + ?Sized>(&mut self, size: usize, rng: &mut R) -> &[usize] {
        self.len = 0;
        self.grow(size, rng)
    }

    /// Extend the current batch to `size` with indices not yet in it.
    pub fn grow<R: Rng + ?Sized>(&mut self, size: usize, rng: &mut R) -> &[usize] {
        let n = self.perm.len();
        if size >= n {
            // the full population, in natural order
            for (k, p) in self.perm.iter_mut().enumerate() {
                *p = k;
            }
            self.len = n;
            return &self.perm;
        }
        for k in self.len..size {
            let j = rng.random_range(k..n);
            self.perm.swap(k, j);
        }
        self.len = self.len.max(size);
        &self.perm[..self.len]
    }

    pub fn current(&self) -> &[usize] {
        &self.perm[..self.len]
    }
}
