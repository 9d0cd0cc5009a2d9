use crate::linalg::Rng;

/// Visits a shuffled permutation of `0..n` in chunks of `batch_size`; the last
/// chunk may be shorter.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    indices: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl BatchIterator {
    pub fn new(n: usize, batch_size: usize, rng: &mut Rng) -> Self {
        assert!(batch_size > 0, "batch_size must be positive");
        Self {
            indices: rng.permutation(n),
            batch_size,
            cursor: 0,
        }
    }

    /// In-order batches, no shuffling.
    pub fn sequential(n: usize, batch_size: usize) -> Self {
        assert!(batch_size > 0, "batch_size must be positive");
        Self {
            indices: (0..n).collect(),
            batch_size,
            cursor: 0,
        }
    }

    pub fn num_batches(&self) -> usize {
        self.indices.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.cursor >= self.indices.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.indices.len());
        let batch = self.indices[self.cursor..end].to_vec();
        self.cursor = end;
        Some(batch)
    }
}
