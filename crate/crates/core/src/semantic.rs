//! The sequential branch: multi-width convolution, GRU recurrence and
//! multi-head self-attention, plus the pooling heads that turn sequences
//! into vectors.
//!
//! Matrices multiply row vectors from the right (`x W`), so input→hidden
//! weights are stored `in×out`.

use crate::error::{Error, Result};
use crate::init;
use crate::numerics::{ReduceOp, Tape, Tensor, Var};
use crate::seed::Rng;

fn check_cols(tape: &Tape<'_>, v: Var, expected: usize, what: &str) -> Result<()> {
    match tape.shape(v) {
        [_, c] if *c == expected => Ok(()),
        s => Err(Error::Dimension(format!("{what}: expected width {expected}, got shape {s:?}"))),
    }
}

fn valid_rows(mask: &[bool], rows: usize) -> Result<Vec<usize>> {
    if mask.len() != rows {
        return Err(Error::Dimension(format!("mask of length {} for {rows} rows", mask.len())));
    }
    let ids: Vec<usize> = (0..rows).filter(|&i| mask[i]).collect();
    if ids.is_empty() {
        return Err(Error::Contract("every position is masked".into()));
    }
    Ok(ids)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub size: usize,
    /// `filters × size × embed_dim`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBankParams {
    pub kernels: Vec<ConvKernel>,
}

impl ConvBankParams {
    pub fn init(sizes: &[usize], filters: usize, embed_dim: usize, rng: &mut Rng) -> Self {
        let kernels = sizes
            .iter()
            .map(|&k| ConvKernel {
                size: k,
                weight: init::glorot(&[filters, k, embed_dim], k * embed_dim, filters, rng),
                bias: init::zeros(&[filters]),
            })
            .collect();
        ConvBankParams { kernels }
    }

    /// Total output channels over all kernel sizes.
    pub fn channels(&self) -> usize {
        self.kernels.iter().map(|k| k.weight.shape()[0]).sum()
    }

    pub fn entries(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for k in &self.kernels {
            out.push((format!("{prefix}.k{}.weight", k.size), &k.weight));
            out.push((format!("{prefix}.k{}.bias", k.size), &k.bias));
        }
        out
    }

    pub fn entries_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for k in &mut self.kernels {
            out.push((format!("{prefix}.k{}.weight", k.size), &mut k.weight));
            out.push((format!("{prefix}.k{}.bias", k.size), &mut k.bias));
        }
        out
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str) -> ConvBankVars {
        let kernels = self
            .kernels
            .iter()
            .map(|k| BoundKernel {
                size: k.size,
                filters: k.weight.shape()[0],
                embed_dim: k.weight.shape()[2],
                weight: tape.param(&format!("{prefix}.k{}.weight", k.size), &k.weight),
                bias: tape.param(&format!("{prefix}.k{}.bias", k.size), &k.bias),
            })
            .collect();
        ConvBankVars { kernels }
    }
}

struct BoundKernel {
    size: usize,
    filters: usize,
    embed_dim: usize,
    weight: Var,
    bias: Var,
}

pub struct ConvBankVars {
    kernels: Vec<BoundKernel>,
}

/// `L×d` embeddings to an `L×C` feature map, `C` = filters × kernel count.
///
/// Position `i` of kernel `k` sees rows `i..i+k`; rows past the end count as
/// zeros, so the output keeps length `L`.
pub fn conv_bank(tape: &mut Tape<'_>, e: Var, params: &ConvBankVars) -> Result<Var> {
    let mut maps = Vec::with_capacity(params.kernels.len());
    for k in &params.kernels {
        check_cols(tape, e, k.embed_dim, "conv_bank input")?;
        let windows = tape.unfold(e, k.size)?;
        let w = tape.reshape(k.weight, &[k.filters, k.size * k.embed_dim])?;
        let wt = tape.transpose(w)?;
        let z = tape.matmul(windows, wt)?;
        let z = tape.add(z, k.bias)?;
        maps.push(tape.relu(z)?);
    }
    tape.concat_cols(&maps)
}

/// Per-channel max over valid positions.
pub fn global_max_pool(tape: &mut Tape<'_>, maps: Var, mask: &[bool]) -> Result<Var> {
    let rows = tape.shape(maps)[0];
    let ids = valid_rows(mask, rows)?;
    let valid = tape.gather_rows(maps, &ids)?;
    tape.reduce(ReduceOp::Max, valid, 0)
}

/// Mean over valid rows.
pub fn masked_mean_pool(tape: &mut Tape<'_>, h: Var, mask: &[bool]) -> Result<Var> {
    let rows = tape.shape(h)[0];
    let ids = valid_rows(mask, rows)?;
    let valid = tape.gather_rows(h, &ids)?;
    tape.reduce(ReduceOp::Mean, valid, 0)
}

/// Update (`z`), reset (`r`) and candidate (`h`) gate weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Option<Tensor>,
    pub b_r: Option<Tensor>,
    pub b_h: Option<Tensor>,
}

impl GruParams {
    pub fn init(input: usize, hidden: usize, bias: bool, rng: &mut Rng) -> Self {
        let w_z = init::glorot_matrix(input, hidden, rng);
        let w_r = init::glorot_matrix(input, hidden, rng);
        let w_h = init::glorot_matrix(input, hidden, rng);
        let u_z = init::glorot_matrix(hidden, hidden, rng);
        let u_r = init::glorot_matrix(hidden, hidden, rng);
        let u_h = init::glorot_matrix(hidden, hidden, rng);
        let b = || bias.then(|| init::zeros(&[hidden]));
        GruParams {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_z.shape()[0]
    }

    pub fn entries(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            (format!("{prefix}.w_z"), &self.w_z),
            (format!("{prefix}.w_r"), &self.w_r),
            (format!("{prefix}.w_h"), &self.w_h),
            (format!("{prefix}.u_z"), &self.u_z),
            (format!("{prefix}.u_r"), &self.u_r),
            (format!("{prefix}.u_h"), &self.u_h),
        ];
        for (n, b) in [("b_z", &self.b_z), ("b_r", &self.b_r), ("b_h", &self.b_h)] {
            if let Some(b) = b {
                out.push((format!("{prefix}.{n}"), b));
            }
        }
        out
    }

    pub fn entries_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            (format!("{prefix}.w_z"), &mut self.w_z),
            (format!("{prefix}.w_r"), &mut self.w_r),
            (format!("{prefix}.w_h"), &mut self.w_h),
            (format!("{prefix}.u_z"), &mut self.u_z),
            (format!("{prefix}.u_r"), &mut self.u_r),
            (format!("{prefix}.u_h"), &mut self.u_h),
        ];
        for (n, b) in [("b_z", &mut self.b_z), ("b_r", &mut self.b_r), ("b_h", &mut self.b_h)] {
            if let Some(b) = b {
                out.push((format!("{prefix}.{n}"), b));
            }
        }
        out
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str) -> GruVars {
        let mut p = |n: &str, t: &'a Tensor| tape.param(&format!("{prefix}.{n}"), t);
        let w = [p("w_z", &self.w_z), p("w_r", &self.w_r), p("w_h", &self.w_h)];
        let u = [p("u_z", &self.u_z), p("u_r", &self.u_r), p("u_h", &self.u_h)];
        let b = [
            self.b_z.as_ref().map(|t| p("b_z", t)),
            self.b_r.as_ref().map(|t| p("b_r", t)),
            self.b_h.as_ref().map(|t| p("b_h", t)),
        ];
        GruVars {
            w,
            u,
            b,
            input: self.input_dim(),
            hidden: self.hidden_dim(),
        }
    }
}

/// Tape handles for one GRU direction, gates ordered `z, r, h`.
pub struct GruVars {
    w: [Var; 3],
    u: [Var; 3],
    b: [Option<Var>; 3],
    input: usize,
    hidden: usize,
}

impl GruVars {
    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

/// One recurrence step given the precomputed input projections `x W_*`.
fn gru_step(tape: &mut Tape<'_>, xw: [Var; 3], h_prev: Var, p: &GruVars) -> Result<Var> {
    let gate = |tape: &mut Tape<'_>, g: usize, hidden_in: Var| -> Result<Var> {
        let hu = tape.matmul(hidden_in, p.u[g])?;
        let s = tape.add(xw[g], hu)?;
        match p.b[g] {
            Some(b) => tape.add(s, b),
            None => Ok(s),
        }
    };
    let z = gate(tape, 0, h_prev)?;
    let z = tape.sigmoid(z)?;
    let r = gate(tape, 1, h_prev)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h_prev)?;
    let cand = gate(tape, 2, rh)?;
    let cand = tape.tanh(cand)?;
    let keep = tape.affine(z, -1.0, 1.0)?;
    let old = tape.mul(keep, h_prev)?;
    let new = tape.mul(z, cand)?;
    tape.add(old, new)
}

/// A single GRU update for a `1×C` input and `1×h` previous state.
pub fn gru_cell(tape: &mut Tape<'_>, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    check_cols(tape, x, p.input, "gru_cell input")?;
    check_cols(tape, h_prev, p.hidden, "gru_cell state")?;
    let xw = [
        tape.matmul(x, p.w[0])?,
        tape.matmul(x, p.w[1])?,
        tape.matmul(x, p.w[2])?,
    ];
    gru_step(tape, xw, h_prev, p)
}

fn gru_pass(tape: &mut Tape<'_>, seq: Var, mask: &[bool], p: &GruVars, reverse: bool) -> Result<Var> {
    check_cols(tape, seq, p.input, "gru input")?;
    let len = tape.shape(seq)[0];
    if mask.len() != len {
        return Err(Error::Dimension(format!("mask of length {} for {len} steps", mask.len())));
    }
    let proj = [
        tape.matmul(seq, p.w[0])?,
        tape.matmul(seq, p.w[1])?,
        tape.matmul(seq, p.w[2])?,
    ];
    let zero = tape.constant(Tensor::zeros(&[1, p.hidden]));
    let mut h = zero;
    let mut out = vec![zero; len];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    };
    for t in order {
        if !mask[t] {
            continue;
        }
        let xw = [
            tape.row(proj[0], t)?,
            tape.row(proj[1], t)?,
            tape.row(proj[2], t)?,
        ];
        h = gru_step(tape, xw, h, p)?;
        out[t] = h;
    }
    tape.stack_rows(&out)
}

/// Runs the recurrence over an `L×C` sequence from a zero state. Masked
/// positions leave the state untouched and emit zero rows. With `backward`
/// set, a right-to-left pass is concatenated per position (`L×2h`).
pub fn gru_forward(
    tape: &mut Tape<'_>,
    seq: Var,
    mask: &[bool],
    forward: &GruVars,
    backward: Option<&GruVars>,
) -> Result<Var> {
    let fwd = gru_pass(tape, seq, mask, forward, false)?;
    match backward {
        None => Ok(fwd),
        Some(b) => {
            let bwd = gru_pass(tape, seq, mask, b, true)?;
            tape.concat_cols(&[fwd, bwd])
        }
    }
}

/// Query/key/value/output projections, each `d×d`, split into `heads`
/// column blocks of width `d / heads`.
#[derive(Clone, Debug, PartialEq)]
pub struct MhaParams {
    pub heads: usize,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

impl MhaParams {
    pub fn init(dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("width {dim} is not divisible into {heads} heads")));
        }
        Ok(MhaParams {
            heads,
            w_q: init::glorot_matrix(dim, dim, rng),
            w_k: init::glorot_matrix(dim, dim, rng),
            w_v: init::glorot_matrix(dim, dim, rng),
            w_o: init::glorot_matrix(dim, dim, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn entries(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.w_q"), &self.w_q),
            (format!("{prefix}.w_k"), &self.w_k),
            (format!("{prefix}.w_v"), &self.w_v),
            (format!("{prefix}.w_o"), &self.w_o),
        ]
    }

    pub fn entries_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.w_q"), &mut self.w_q),
            (format!("{prefix}.w_k"), &mut self.w_k),
            (format!("{prefix}.w_v"), &mut self.w_v),
            (format!("{prefix}.w_o"), &mut self.w_o),
        ]
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str) -> MhaVars {
        MhaVars {
            heads: self.heads,
            dim: self.dim(),
            w_q: tape.param(&format!("{prefix}.w_q"), &self.w_q),
            w_k: tape.param(&format!("{prefix}.w_k"), &self.w_k),
            w_v: tape.param(&format!("{prefix}.w_v"), &self.w_v),
            w_o: tape.param(&format!("{prefix}.w_o"), &self.w_o),
        }
    }
}

pub struct MhaVars {
    heads: usize,
    dim: usize,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    w_o: Var,
}

/// Additive bias applied to scores of masked keys.
pub const MASKED_KEY_BIAS: f64 = -1e9;

/// Self-attention over an `L×d` sequence. Masked keys receive
/// [`MASKED_KEY_BIAS`] before the softmax; masked query rows are zeroed in
/// the output.
pub fn multi_head_attention(tape: &mut Tape<'_>, h: Var, mask: &[bool], p: &MhaVars) -> Result<Var> {
    if p.heads == 0 || !p.dim.is_multiple_of(p.heads) {
        return Err(Error::Config(format!("width {} is not divisible into {} heads", p.dim, p.heads)));
    }
    check_cols(tape, h, p.dim, "attention input")?;
    let len = tape.shape(h)[0];
    valid_rows(mask, len)?;
    let dk = p.dim / p.heads;
    let q = tape.matmul(h, p.w_q)?;
    let k = tape.matmul(h, p.w_k)?;
    let v = tape.matmul(h, p.w_v)?;
    let all_valid = mask.iter().all(|&m| m);
    let key_bias = (!all_valid).then(|| {
        let bias = mask.iter().map(|&m| if m { 0.0 } else { MASKED_KEY_BIAS }).collect();
        tape.constant(Tensor::vector(bias).unwrap())
    });
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(p.heads);
    for head in 0..p.heads {
        let (s, e) = (head * dk, (head + 1) * dk);
        let qh = tape.slice_cols(q, s, e)?;
        let kh = tape.slice_cols(k, s, e)?;
        let vh = tape.slice_cols(v, s, e)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let mut scores = tape.affine(scores, scale, 0.0)?;
        if let Some(b) = key_bias {
            scores = tape.add(scores, b)?;
        }
        let weights = tape.softmax_rows(scores)?;
        outs.push(tape.matmul(weights, vh)?);
    }
    let cat = tape.concat_cols(&outs)?;
    let out = tape.matmul(cat, p.w_o)?;
    if all_valid {
        return Ok(out);
    }
    let mut keep = Vec::with_capacity(len * p.dim);
    for &m in mask {
        keep.extend(std::iter::repeat_n(if m { 1.0 } else { 0.0 }, p.dim));
    }
    let keep = tape.constant(Tensor::matrix(len, p.dim, keep)?);
    tape.mul(out, keep)
}
