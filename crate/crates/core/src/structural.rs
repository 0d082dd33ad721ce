//! Bidirectional one-layer graph convolution over the co-occurrence graph.

use crate::cograph::Adjacency;
use crate::error::{Error, Result};
use crate::init;
use crate::numerics::{Tape, Tensor, Var};
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct BigcnParams {
    /// `d×g`, applied to `A X`
    pub w_f: Tensor,
    /// `d×g`, applied to `Aᵀ X`
    pub w_b: Tensor,
    pub b_f: Option<Tensor>,
    pub b_b: Option<Tensor>,
}

impl BigcnParams {
    pub fn init(input: usize, hidden: usize, bias: bool, rng: &mut Rng) -> Self {
        BigcnParams {
            w_f: init::glorot_matrix(input, hidden, rng),
            w_b: init::glorot_matrix(input, hidden, rng),
            b_f: bias.then(|| init::zeros(&[hidden])),
            b_b: bias.then(|| init::zeros(&[hidden])),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.shape()[1]
    }

    pub fn entries(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = vec![(format!("{prefix}.w_f"), &self.w_f), (format!("{prefix}.w_b"), &self.w_b)];
        if let Some(b) = &self.b_f {
            out.push((format!("{prefix}.b_f"), b));
        }
        if let Some(b) = &self.b_b {
            out.push((format!("{prefix}.b_b"), b));
        }
        out
    }

    pub fn entries_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            (format!("{prefix}.w_f"), &mut self.w_f),
            (format!("{prefix}.w_b"), &mut self.w_b),
        ];
        if let Some(b) = &mut self.b_f {
            out.push((format!("{prefix}.b_f"), b));
        }
        if let Some(b) = &mut self.b_b {
            out.push((format!("{prefix}.b_b"), b));
        }
        out
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str) -> BigcnVars {
        BigcnVars {
            w_f: tape.param(&format!("{prefix}.w_f"), &self.w_f),
            w_b: tape.param(&format!("{prefix}.w_b"), &self.w_b),
            b_f: self.b_f.as_ref().map(|b| tape.param(&format!("{prefix}.b_f"), b)),
            b_b: self.b_b.as_ref().map(|b| tape.param(&format!("{prefix}.b_b"), b)),
        }
    }
}

pub struct BigcnVars {
    w_f: Var,
    w_b: Var,
    b_f: Option<Var>,
    b_b: Option<Var>,
}

/// `[ReLU(A X W_f) ; ReLU(Aᵀ X W_b)]` as an `L×2g` matrix. Row `i` of the
/// forward half aggregates the out-neighbours of node `i`.
pub fn bigcn_forward(tape: &mut Tape<'_>, x: Var, adj: &Adjacency, p: &BigcnVars) -> Result<Var> {
    let rows = match tape.shape(x) {
        [r, _] => *r,
        s => return Err(Error::Dimension(format!("graph input must be a matrix, got {s:?}"))),
    };
    if rows != adj.size() {
        return Err(Error::Dimension(format!(
            "{rows} node features for a {0}×{0} adjacency",
            adj.size()
        )));
    }
    let a = tape.constant(adj.to_tensor());
    let at = tape.constant(adj.transpose_tensor());
    let branch = |tape: &mut Tape<'_>, m: Var, w: Var, b: Option<Var>| -> Result<Var> {
        let ax = tape.matmul(m, x)?;
        let mut z = tape.matmul(ax, w)?;
        if let Some(b) = b {
            z = tape.add(z, b)?;
        }
        tape.relu(z)
    };
    let hf = branch(tape, a, p.w_f, p.b_f)?;
    let hb = branch(tape, at, p.w_b, p.b_b)?;
    tape.concat_cols(&[hf, hb])
}

/// Mean of node rows at valid positions.
pub fn graph_mean_pool(tape: &mut Tape<'_>, h: Var, mask: &[bool]) -> Result<Var> {
    crate::semantic::masked_mean_pool(tape, h, mask)
}
