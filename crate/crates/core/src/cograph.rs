//! Per-sentence word co-occurrence graphs over token positions.
//!
//! Edges are directed by word order: `i -> j` whenever both positions are
//! valid and `0 < j - i < window`. The transpose therefore holds the
//! "preceded by" relation, which is what gives the two graph-convolution
//! directions different inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::textdata::EncodedExample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyMode {
    /// 0/1 edges, no self-loops.
    Raw,
    /// Self-loops on valid nodes, then each row divided by its sum.
    RowNorm,
}

/// Dense `L×L` adjacency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    size: usize,
    matrix: Vec<f64>,
    window: usize,
    mode: AdjacencyMode,
    valid: Vec<bool>,
}

impl Adjacency {
    /// Wraps an arbitrary non-negative `n×n` matrix (e.g. a symmetrised or
    /// relabelled graph). Rows and columns of invalid nodes must be zero.
    pub fn from_dense(matrix: Vec<f64>, valid: Vec<bool>) -> Result<Adjacency> {
        let n = valid.len();
        if matrix.len() != n * n {
            return Err(Error::Dimension(format!("{} entries for {n} nodes", matrix.len())));
        }
        if matrix.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Value("adjacency entries must be finite and non-negative".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if (!valid[i] || !valid[j]) && matrix[i * n + j] != 0.0 {
                    return Err(Error::Value(format!("edge ({i}, {j}) touches a masked node")));
                }
            }
        }
        Ok(Adjacency {
            size: n,
            matrix,
            window: 0,
            mode: AdjacencyMode::Raw,
            valid,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn mode(&self) -> AdjacencyMode {
        self.mode
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.size + j]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.size, self.size, self.matrix.clone()).unwrap()
    }

    pub fn transpose_tensor(&self) -> Tensor {
        let n = self.size;
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                t[j * n + i] = self.matrix[i * n + j];
            }
        }
        Tensor::matrix(n, n, t).unwrap()
    }

    /// Nonzero entries in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.size;
        (0..n * n)
            .filter(|&k| self.matrix[k] != 0.0)
            .map(|k| (k / n, k % n))
            .collect()
    }

    /// The top-left `len×len` block (used to drop trailing padding).
    pub fn prefix(&self, len: usize) -> Adjacency {
        let len = len.min(self.size);
        let mut matrix = Vec::with_capacity(len * len);
        for i in 0..len {
            matrix.extend_from_slice(&self.matrix[i * self.size..i * self.size + len]);
        }
        Adjacency {
            size: len,
            matrix,
            window: self.window,
            mode: self.mode,
            valid: self.valid[..len].to_vec(),
        }
    }
}

/// Builds the raw directed window graph over valid positions of `mask`.
pub fn build_from_mask(mask: &[bool], window: usize) -> Result<Adjacency> {
    if window < 2 {
        return Err(Error::Value(format!("window must be at least 2, got {window}")));
    }
    let n = mask.len();
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        for j in i + 1..n.min(i + window) {
            if mask[j] {
                matrix[i * n + j] = 1.0;
            }
        }
    }
    Ok(Adjacency {
        size: n,
        matrix,
        window,
        mode: AdjacencyMode::Raw,
        valid: mask.to_vec(),
    })
}

pub fn build_cooccurrence(example: &EncodedExample, window: usize) -> Result<Adjacency> {
    build_from_mask(&example.mask, window)
}

pub fn normalize(adj: &Adjacency, mode: AdjacencyMode) -> Adjacency {
    match mode {
        AdjacencyMode::Raw => adj.clone(),
        AdjacencyMode::RowNorm => {
            let n = adj.size;
            let mut matrix = adj.matrix.clone();
            for i in 0..n {
                if adj.valid[i] {
                    matrix[i * n + i] += 1.0;
                }
                let row = &mut matrix[i * n..(i + 1) * n];
                let sum: f64 = row.iter().sum();
                if sum > 0.0 {
                    row.iter_mut().for_each(|v| *v /= sum);
                }
            }
            Adjacency {
                matrix,
                mode: AdjacencyMode::RowNorm,
                ..adj.clone()
            }
        }
    }
}
