//! Flat parameter storage.
//!
//! All parameters of a network live in one contiguous buffer. That makes
//! optimizer updates, finite-difference probing, checkpointing, and
//! deterministic initialization straightforward: every consumer sees the
//! same flat layout, addressed by named entries.

use crate::scalar::Scalar;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Handle to one named parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Named parameter tensors backed by a single flat buffer.
#[derive(Debug, Clone)]
pub struct ParamStore<S: Scalar> {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    values: Vec<S>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
        }
    }

    /// Register a `rows x cols` tensor initialized by `init(r, c)`.
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, mut init: impl FnMut(usize, usize) -> S) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let offset = self.values.len();
        for r in 0..rows {
            for c in 0..cols {
                self.values.push(init(r, c));
            }
        }
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            offset,
            rows,
            cols,
        });
        self.index.insert(name.to_string(), id.0);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    /// Materialize one parameter as a matrix.
    pub fn matrix(&self, id: ParamId) -> Array2<S> {
        let e = &self.entries[id.0];
        Array2::from_shape_vec(
            (e.rows, e.cols),
            self.values[e.offset..e.offset + e.rows * e.cols].to_vec(),
        )
        .expect("entry bounds are valid")
    }

    /// Overwrite one parameter from a matrix of matching shape.
    pub fn set_matrix(&mut self, id: ParamId, m: &Array2<S>) {
        let e = &self.entries[id.0];
        assert_eq!((e.rows, e.cols), m.dim(), "shape mismatch for {}", e.name);
        for (i, v) in m.iter().enumerate() {
            self.values[e.offset + i] = *v;
        }
    }

    /// Zero every value of one parameter.
    pub fn zero_param(&mut self, id: ParamId) {
        let e = &self.entries[id.0];
        for v in &mut self.values[e.offset..e.offset + e.rows * e.cols] {
            *v = S::zero();
        }
    }

    /// Replace the whole buffer (checkpoint restore). Lengths must match.
    pub fn load_values(&mut self, values: Vec<S>) {
        assert_eq!(values.len(), self.values.len(), "parameter buffer length mismatch");
        self.values = values;
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn uniform_fan_in<S: Scalar, R: Rng>(fan_in: usize, rng: &mut R) -> impl FnMut(usize, usize) -> S + '_ {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    move |_, _| S::from_f64_lossy(rng.gen_range(-bound..bound))
}

/// Zero initialization (biases, residual output heads).
pub fn zeros<S: Scalar>() -> impl FnMut(usize, usize) -> S {
    |_, _| S::zero()
}

/// Orthogonal initialization for square recurrent kernels, computed by
/// modified Gram-Schmidt on a Gaussian matrix. For an `n x (k*n)` kernel the
/// `k` square gate blocks are orthogonalized independently.
pub fn orthogonal_blocks<S: Scalar, R: Rng>(n: usize, blocks: usize, rng: &mut R) -> Vec<S> {
    let mut out = vec![S::zero(); n * n * blocks];
    for b in 0..blocks {
        let q = orthogonal_matrix(n, rng);
        for r in 0..n {
            for c in 0..n {
                out[r * (n * blocks) + b * n + c] = S::from_f64_lossy(q[r * n + c]);
            }
        }
    }
    out
}

fn orthogonal_matrix<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    // modified Gram-Schmidt over contiguous column vectors
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..n)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect()
        })
        .collect();
    for c in 0..n {
        let (done, rest) = cols.split_at_mut(c);
        let col = &mut rest[0];
        for prev in done.iter() {
            let dot: f64 = col.iter().zip(prev.iter()).map(|(a, b)| a * b).sum();
            for (v, p) in col.iter_mut().zip(prev.iter()) {
                *v -= dot * p;
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in col.iter_mut() {
            *v /= norm;
        }
    }
    let mut m = vec![0.0; n * n];
    for (c, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            m[r * n + c] = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn add_and_lookup() {
        let mut ps = ParamStore::<f64>::new();
        let a = ps.add("w", 2, 3, |r, c| (r * 3 + c) as f64);
        let b = ps.add("b", 1, 3, zeros());
        assert_eq!(ps.len(), 9);
        assert_eq!(ps.entry(a).offset, 0);
        assert_eq!(ps.entry(b).offset, 6);
        assert_eq!(ps.id("w"), Some(a));
        let m = ps.matrix(a);
        assert_eq!(m[(1, 2)], 5.0);
    }

    #[test]
    fn orthogonal_blocks_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 16;
        let vals = orthogonal_blocks::<f64, _>(n, 3, &mut rng);
        for b in 0..3 {
            // check Q^T Q = I for each block
            for c1 in 0..n {
                for c2 in 0..n {
                    let mut dot = 0.0;
                    for r in 0..n {
                        dot += vals[r * (3 * n) + b * n + c1] * vals[r * (3 * n) + b * n + c2];
                    }
                    let expect = if c1 == c2 { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-9, "block {b} ({c1},{c2}): {dot}");
                }
            }
        }
    }

    #[test]
    fn set_matrix_round_trips() {
        let mut ps = ParamStore::<f32>::new();
        let a = ps.add("w", 3, 2, zeros());
        let m = Array2::from_shape_fn((3, 2), |(r, c)| (r + 10 * c) as f32);
        ps.set_matrix(a, &m);
        assert_eq!(ps.matrix(a), m);
    }
}
