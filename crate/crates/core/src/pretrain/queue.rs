use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{self, stream};

/// Fixed-capacity FIFO of key embeddings used as negatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyQueue {
    dim: usize,
    capacity: usize,
    buffer: Vec<f64>,
    cursor: usize,
    filled: usize,
}

impl KeyQueue {
    pub fn empty(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::invalid("queue capacity and dimension must be positive"));
        }
        Ok(Self {
            dim,
            capacity,
            buffer: vec![0.0; capacity * dim],
            cursor: 0,
            filled: 0,
        })
    }

    /// A full queue of random unit vectors.
    pub fn random(capacity: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut q = Self::empty(capacity, dim)?;
        let mut rng = rng::rng_at(seed, &[stream::QUEUE]);
        for row in q.buffer.chunks_exact_mut(dim) {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        q.filled = capacity;
        Ok(q)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Raw `capacity × dim` storage.
    pub fn buffer(&self) -> &[f64] {
        &self.buffer
    }

    /// The stored keys. Until the queue wraps these are rows `0..filled`;
    /// afterwards every row.
    pub fn keys(&self) -> &[f64] {
        &self.buffer[..self.filled * self.dim]
    }

    /// Writes `keys` at the cursor, wrapping around and overwriting the
    /// oldest rows.
    pub fn push(&mut self, keys: &Matrix) -> Result<()> {
        if keys.cols != self.dim {
            return Err(Error::shape(format!("key dim {} != queue dim {}", keys.cols, self.dim)));
        }
        if keys.rows > self.capacity {
            return Err(Error::invalid(format!(
                "cannot push {} keys into a queue of capacity {}",
                keys.rows, self.capacity
            )));
        }
        for row in keys.iter_rows() {
            let start = self.cursor * self.dim;
            self.buffer[start..start + self.dim].copy_from_slice(row);
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        self.filled = (self.filled + keys.rows).min(self.capacity);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn fill_accounting() {
        let mut q = KeyQueue::empty(4, 2).unwrap();
        q.push(&keys(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert_eq!((q.filled(), q.cursor()), (3, 3));
        assert_eq!(q.keys().len(), 6);
    }

    #[test]
    fn full_queue_replaces_oldest() {
        let mut q = KeyQueue::empty(4, 2).unwrap();
        q.push(&keys(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])).unwrap();
        q.push(&keys(&[[0.6, 0.8], [0.8, 0.6]])).unwrap();
        assert_eq!(q.buffer(), &[0.6, 0.8, 0.8, 0.6, -1.0, 0.0, 0.0, -1.0]);
        assert_eq!((q.filled(), q.cursor()), (4, 2));
    }

    #[test]
    fn two_full_pushes_leave_second_batch() {
        let mut q = KeyQueue::empty(3, 2).unwrap();
        // Offset the cursor first so the second batch wraps.
        q.push(&keys(&[[1.0, 0.0]])).unwrap();
        let first = keys(&[[0.0, 1.0], [1.0, 0.0], [0.0, -1.0]]);
        let second = keys(&[[0.6, 0.8], [-0.6, 0.8], [0.8, -0.6]]);
        q.push(&first).unwrap();
        q.push(&second).unwrap();
        // Ring simulation: cursor started at 1, so rows land at 1, 2, 0.
        assert_eq!(q.buffer(), &[0.8, -0.6, 0.6, 0.8, -0.6, 0.8]);
        let mut fresh = KeyQueue::empty(3, 2).unwrap();
        fresh.push(&first).unwrap();
        fresh.push(&second).unwrap();
        assert_eq!(fresh.buffer(), second.data.as_slice());
    }

    #[test]
    fn oversized_push_is_rejected() {
        let mut q = KeyQueue::empty(2, 2).unwrap();
        assert!(q.push(&keys(&[[1.0, 0.0]; 3])).is_err());
    }

    #[test]
    fn random_queue_is_full_and_unit_norm() {
        let q = KeyQueue::random(16, 8, 4).unwrap();
        assert_eq!(q.filled(), 16);
        for row in q.keys().chunks_exact(8) {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
