//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and enough
//! bookkeeping to run its backward rule. Nodes are only ever appended, so the
//! node order is a topological order and `backward` is a single reverse sweep.
//!
//! Leaves may borrow their storage (model parameters are never copied onto the
//! tape), hence the lifetime on [`Tape`].

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Relu,
    Sigmoid,
    Tanh,
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    /// Gradient flows to the first maximal element of each slice (scan order).
    Max,
    Mean,
    Sum,
}

/// Gradient of a named parameter after [`Tape::backward`].
#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad {
    Dense(Vec<f64>),
    /// Row-sparse gradient of a 2-D table; only touched rows are present.
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl ParamGrad {
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        match self {
            ParamGrad::Dense(g) => g.clone(),
            ParamGrad::Rows { width, rows } => {
                let mut out = vec![0.0; len];
                for (&r, g) in rows {
                    out[r * width..(r + 1) * width].copy_from_slice(g);
                }
                out
            }
        }
    }

    /// Adds this gradient into the tensor's gradient slot.
    pub fn accumulate_into(&self, tensor: &mut Tensor) -> Result<()> {
        match self {
            ParamGrad::Dense(g) => tensor.accumulate_grad(g),
            ParamGrad::Rows { rows, .. } => {
                for (&r, g) in rows {
                    tensor.accumulate_grad_row(r, g)?;
                }
                Ok(())
            }
        }
    }
}

enum Value<'a> {
    Owned(Vec<f64>),
    Borrowed(&'a [f64]),
}

impl Value<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(s) => s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Unary(Unary, Var),
    Binary {
        op: Binary,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    SoftmaxRows(Var),
    Reduce {
        op: ReduceOp,
        x: Var,
        len: usize,
        inner: usize,
        argmax: Vec<usize>,
    },
    SumAll(Var),
    ConcatCols {
        parts: Vec<Var>,
        widths: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Row {
        x: Var,
        row: usize,
    },
    StackRows(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Unfold {
        x: Var,
        k: usize,
    },
    LogClamped {
        x: Var,
        floor: f64,
    },
    Index {
        x: Var,
        i: usize,
    },
}

struct Node<'a> {
    value: Value<'a>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass and replays them backwards once.
///
/// A tape is single-owner: build it, call [`Tape::backward`] at most once,
/// read gradients, drop it.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<(String, Var)>,
    grads: Vec<Option<Vec<f64>>>,
    sparse: HashMap<usize, BTreeMap<usize, Vec<f64>>>,
    consumed: bool,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(acc: &mut [f64], delta: &[f64]) {
    for (a, d) in acc.iter_mut().zip(delta) {
        *a += d;
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[Var]) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("variable {} is not on this tape", v.0)));
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).unwrap()
    }

    /// Scalar value of a one-element variable.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(format!("{what} expects a matrix, got shape {s:?}"))),
        }
    }

    /// Rows and trailing width, treating a vector as a single row.
    fn rows_cols(&self, v: Var) -> (usize, usize) {
        let s = self.shape(v);
        let c = *s.last().unwrap();
        (self.value(v).len() / c, c)
    }

    fn leaf_node(&mut self, value: Value<'a>, shape: Vec<usize>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            shape,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an owned leaf; gradients are tracked when the tensor requires them.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        let shape = t.shape().to_vec();
        self.leaf_node(Value::Owned(t.into_data()), shape, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.leaf_node(Value::Owned(t.into_data()), shape, false)
    }

    /// Binds a borrowed parameter under `name`; its gradient is reported by
    /// [`Tape::param_grads`].
    pub fn param(&mut self, name: &str, t: &'a Tensor) -> Var {
        let v = self.leaf_node(Value::Borrowed(t.data()), t.shape().to_vec(), t.requires_grad());
        self.params.push((name.to_string(), v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        Ok(self.push(out, vec![m, n], Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let (m, n) = self.dims2(a, "transpose")?;
        let out = transpose_raw(self.value(a), m, n);
        Ok(self.push(out, vec![n, m], Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let n: usize = shape.iter().product();
        if n != self.value(a).len() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape(a)
            )));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(out, shape.to_vec(), Op::Reshape(a), &[a]))
    }

    /// Applies one of the elementwise primitives. Binary ops take operands of
    /// identical shape, or a vector `b` matching the trailing extent of `a`
    /// (added/multiplied into every row).
    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        self.check(a)?;
        let unary = match op {
            Elementwise::Relu => Some(Unary::Relu),
            Elementwise::Sigmoid => Some(Unary::Sigmoid),
            Elementwise::Tanh => Some(Unary::Tanh),
            _ => None,
        };
        if let Some(u) = unary {
            if b.is_some() {
                return Err(Error::Contract(format!("{op:?} takes one operand")));
            }
            let f: fn(f64) -> f64 = match u {
                Unary::Relu => |x| x.max(0.0),
                Unary::Sigmoid => sigmoid,
                Unary::Tanh => f64::tanh,
            };
            let out = self.value(a).iter().map(|&x| f(x)).collect();
            return Ok(self.push(out, self.shape(a).to_vec(), Op::Unary(u, a), &[a]));
        }
        let b = b.ok_or_else(|| Error::Contract(format!("{op:?} takes two operands")))?;
        self.check(b)?;
        let bop = match op {
            Elementwise::Add => Binary::Add,
            Elementwise::Sub => Binary::Sub,
            _ => Binary::Mul,
        };
        let sa = self.shape(a);
        let sb = self.shape(b);
        let broadcast = if sa == sb {
            false
        } else {
            let trailing = *sa.last().unwrap();
            let vec_like = matches!(sb, [n] if *n == trailing) || matches!(sb, [1, n] if *n == trailing);
            if !vec_like {
                return Err(Error::dim(format!(
                    "cannot broadcast {sb:?} onto {sa:?}"
                )));
            }
            true
        };
        let f: fn(f64, f64) -> f64 = match bop {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let av = self.value(a);
        let bv = self.value(b);
        let out: Vec<f64> = if broadcast {
            let w = bv.len();
            av.iter().enumerate().map(|(i, &x)| f(x, bv[i % w])).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        };
        let shape = sa.to_vec();
        Ok(self.push(
            out,
            shape,
            Op::Binary {
                op: bop,
                a,
                b,
                broadcast,
            },
            &[a, b],
        ))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Relu, a, None)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sigmoid, a, None)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Tanh, a, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sub, a, Some(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Mul, a, Some(b))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).iter().map(|&v| scale * v + shift).collect();
        Ok(self.push(out, self.shape(x).to_vec(), Op::Affine { x, scale }, &[x]))
    }

    /// Row-wise softmax over the trailing axis, computed with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let (rows, n) = self.rows_cols(x);
        if n == 0 {
            return Err(Error::dim("softmax over an empty row"));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[r * n..(r + 1) * n];
            let mut sum = 0.0;
            for (oi, &v) in o.iter_mut().zip(row) {
                *oi = (v - max).exp();
                sum += *oi;
            }
            o.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(self.push(out, self.shape(x).to_vec(), Op::SoftmaxRows(x), &[x]))
    }

    /// Reduces along `axis`, dropping it from the shape (a full reduction
    /// leaves shape `[1]`).
    pub fn reduce(&mut self, op: ReduceOp, x: Var, axis: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        if op == ReduceOp::Max {
            argmax = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| xv[(o * len + l) * inner + i];
                let slot = o * inner + i;
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let s: f64 = (0..len).map(at).sum();
                        out[slot] = if op == ReduceOp::Mean { s / len as f64 } else { s };
                    }
                    ReduceOp::Max => {
                        let mut best = 0;
                        for l in 1..len {
                            if at(l) > at(best) {
                                best = l;
                            }
                        }
                        argmax[slot] = best;
                        out[slot] = at(best);
                    }
                }
            }
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(d, _)| d != axis)
            .map(|(_, &s)| s)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.push(
            out,
            out_shape,
            Op::Reduce {
                op,
                x,
                len,
                inner,
                argmax,
            },
            &[x],
        ))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).iter().sum();
        Ok(self.push(vec![s], vec![1], Op::SumAll(x), &[x]))
    }

    /// Concatenates along the trailing axis. Vectors concatenate to a vector;
    /// matrices must share their row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of nothing".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let all_vectors = parts.iter().all(|&p| self.shape(p).len() == 1);
        let rows = self.rows_cols(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.rows_cols(p);
            if r != rows || (!all_vectors && self.shape(p).len() != 2) {
                return Err(Error::dim(format!(
                    "concat operands disagree: {:?} vs {:?}",
                    self.shape(parts[0]),
                    self.shape(p)
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&v[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let shape = if all_vectors { vec![total] } else { vec![rows, total] };
        Ok(self.push(
            out,
            shape,
            Op::ConcatCols {
                parts: parts.to_vec(),
                widths,
            },
            parts,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.check(x)?;
        let (rows, cols) = self.dims2(x, "slice_cols")?;
        if start >= end || end > cols {
            return Err(Error::dim(format!("column range {start}..{end} of {cols}")));
        }
        let w = end - start;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&xv[r * cols + start..r * cols + end]);
        }
        Ok(self.push(out, vec![rows, w], Op::SliceCols { x, start }, &[x]))
    }

    /// Row `row` of a matrix, as a `1×n` matrix.
    pub fn row(&mut self, x: Var, row: usize) -> Result<Var> {
        self.check(x)?;
        let (rows, cols) = self.dims2(x, "row")?;
        if row >= rows {
            return Err(Error::dim(format!("row {row} of {rows}")));
        }
        let out = self.value(x)[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(out, vec![1, cols], Op::Row { x, row }, &[x]))
    }

    /// Stacks `1×n` matrices (or length-`n` vectors) into an `m×n` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Contract("stack of nothing".into()));
        }
        for &r in rows {
            self.check(r)?;
        }
        let n = self.value(rows[0]).len();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let ok = matches!(self.shape(r), [c] | [1, c] if *c == n);
            if !ok {
                return Err(Error::dim(format!(
                    "stack operands disagree: {:?} vs {:?}",
                    self.shape(rows[0]),
                    self.shape(r)
                )));
            }
            out.extend_from_slice(self.value(r));
        }
        Ok(self.push(out, vec![rows.len(), n], Op::StackRows(rows.to_vec()), rows))
    }

    /// Selects rows of a matrix by index (repeats allowed).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check(table)?;
        let (rows, cols) = self.dims2(table, "gather_rows")?;
        if ids.is_empty() {
            return Err(Error::Contract("gather of no rows".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::dim(format!("row index {bad} out of range for {rows} rows")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&tv[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            out,
            vec![ids.len(), cols],
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Window matrix for a width-`k` 1-D convolution: row `i` is the
    /// concatenation of rows `i..i+k` of `x`, with rows past the end read as zero.
    pub fn unfold(&mut self, x: Var, k: usize) -> Result<Var> {
        self.check(x)?;
        let (l, d) = self.dims2(x, "unfold")?;
        if k == 0 {
            return Err(Error::dim("window width must be positive"));
        }
        let xv = self.value(x);
        let w = k * d;
        let mut out = vec![0.0; l * w];
        for i in 0..l {
            for j in 0..k.min(l - i) {
                out[i * w + j * d..i * w + (j + 1) * d].copy_from_slice(&xv[(i + j) * d..(i + j + 1) * d]);
            }
        }
        Ok(self.push(out, vec![l, w], Op::Unfold { x, k }, &[x]))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).iter().map(|&v| v.max(floor).ln()).collect();
        Ok(self.push(out, self.shape(x).to_vec(), Op::LogClamped { x, floor }, &[x]))
    }

    /// Element `i` of the flat buffer, as a scalar.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        self.check(x)?;
        let v = *self
            .value(x)
            .get(i)
            .ok_or_else(|| Error::dim(format!("index {i} out of range for {:?}", self.shape(x))))?;
        Ok(self.push(vec![v], vec![1], Op::Index { x, i }, &[x]))
    }

    /// Populates gradients of every grad-requiring node reachable from `loss`.
    /// May be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.consumed {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let mut sparse: HashMap<usize, BTreeMap<usize, Vec<f64>>> = HashMap::new();
        grads[loss.0] = Some(vec![1.0]);

        let wants = |v: Var| nodes[v.0].requires_grad;
        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
            match &mut grads[v.0] {
                Some(g) => add_into(g, &delta),
                slot => *slot = Some(delta),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            let y = node.value.as_slice();
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    if wants(*a) {
                        let bt = transpose_raw(nodes[b.0].value.as_slice(), k, n);
                        acc(&mut grads, *a, matmul_raw(&dy, &bt, m, n, k));
                    }
                    if wants(*b) {
                        let at = transpose_raw(nodes[a.0].value.as_slice(), m, k);
                        acc(&mut grads, *b, matmul_raw(&at, &dy, k, m, n));
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (node.shape[0], node.shape[1]);
                    acc(&mut grads, *a, transpose_raw(&dy, m, n));
                }
                Op::Reshape(a) => acc(&mut grads, *a, dy),
                Op::Unary(u, a) => {
                    let dx = match u {
                        Unary::Relu => {
                            let x = nodes[a.0].value.as_slice();
                            dy.iter().zip(x).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect()
                        }
                        Unary::Sigmoid => dy.iter().zip(y).map(|(&g, &s)| g * s * (1.0 - s)).collect(),
                        Unary::Tanh => dy.iter().zip(y).map(|(&g, &t)| g * (1.0 - t * t)).collect(),
                    };
                    acc(&mut grads, *a, dx);
                }
                Op::Binary { op, a, b, broadcast } => {
                    let av = nodes[a.0].value.as_slice();
                    let bv = nodes[b.0].value.as_slice();
                    let w = bv.len();
                    if wants(*a) {
                        let da = match op {
                            Binary::Add | Binary::Sub => dy.clone(),
                            Binary::Mul => dy.iter().enumerate().map(|(i, &g)| g * bv[i % w]).collect(),
                        };
                        acc(&mut grads, *a, da);
                    }
                    if wants(*b) {
                        let sign = if *op == Binary::Sub { -1.0 } else { 1.0 };
                        let term = |i: usize, g: f64| match op {
                            Binary::Mul => g * av[i],
                            _ => sign * g,
                        };
                        let db = if *broadcast {
                            let mut db = vec![0.0; w];
                            for (i, &g) in dy.iter().enumerate() {
                                db[i % w] += term(i, g);
                            }
                            db
                        } else {
                            dy.iter().enumerate().map(|(i, &g)| term(i, g)).collect()
                        };
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Affine { x, scale } => {
                    acc(&mut grads, *x, dy.iter().map(|g| g * scale).collect());
                }
                Op::SoftmaxRows(x) => {
                    let n = *node.shape.last().unwrap();
                    let mut dx = vec![0.0; dy.len()];
                    for r in 0..dy.len() / n {
                        let s = r * n..(r + 1) * n;
                        let dot: f64 = dy[s.clone()].iter().zip(&y[s.clone()]).map(|(g, p)| g * p).sum();
                        for i in s {
                            dx[i] = y[i] * (dy[i] - dot);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Reduce {
                    op,
                    x,
                    len,
                    inner,
                    argmax,
                } => {
                    let (len, inner) = (*len, *inner);
                    let mut dx = vec![0.0; nodes[x.0].value.as_slice().len()];
                    for (slot, &g) in dy.iter().enumerate() {
                        let (o, i) = (slot / inner, slot % inner);
                        match op {
                            ReduceOp::Sum | ReduceOp::Mean => {
                                let g = if *op == ReduceOp::Mean { g / len as f64 } else { g };
                                for l in 0..len {
                                    dx[(o * len + l) * inner + i] += g;
                                }
                            }
                            ReduceOp::Max => dx[(o * len + argmax[slot]) * inner + i] += g,
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::SumAll(x) => {
                    let n = nodes[x.0].value.as_slice().len();
                    acc(&mut grads, *x, vec![dy[0]; n]);
                }
                Op::ConcatCols { parts, widths } => {
                    let total: usize = widths.iter().sum();
                    let rows = dy.len() / total;
                    let mut offset = 0;
                    for (&p, &w) in parts.iter().zip(widths) {
                        if wants(p) {
                            let mut dp = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                dp.extend_from_slice(&dy[r * total + offset..r * total + offset + w]);
                            }
                            acc(&mut grads, p, dp);
                        }
                        offset += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let (rows, cols) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                    let w = node.shape[1];
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        dx[r * cols + start..r * cols + start + w].copy_from_slice(&dy[r * w..(r + 1) * w]);
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Row { x, row } => {
                    let n = nodes[x.0].value.as_slice().len();
                    let cols = dy.len();
                    let mut dx = vec![0.0; n];
                    dx[row * cols..(row + 1) * cols].copy_from_slice(&dy);
                    acc(&mut grads, *x, dx);
                }
                Op::StackRows(rows) => {
                    let n = node.shape[1];
                    for (r, &v) in rows.iter().enumerate() {
                        if wants(v) {
                            acc(&mut grads, v, dy[r * n..(r + 1) * n].to_vec());
                        }
                    }
                }
                Op::GatherRows { table, ids } => {
                    let (rows, cols) = (nodes[table.0].shape[0], nodes[table.0].shape[1]);
                    if matches!(nodes[table.0].op, Op::Leaf) {
                        let entry = sparse.entry(table.0).or_default();
                        for (k, &id) in ids.iter().enumerate() {
                            let g = entry.entry(id).or_insert_with(|| vec![0.0; cols]);
                            add_into(g, &dy[k * cols..(k + 1) * cols]);
                        }
                    } else {
                        let mut dx = vec![0.0; rows * cols];
                        for (k, &id) in ids.iter().enumerate() {
                            add_into(&mut dx[id * cols..(id + 1) * cols], &dy[k * cols..(k + 1) * cols]);
                        }
                        acc(&mut grads, *table, dx);
                    }
                }
                Op::Unfold { x, k } => {
                    let (l, d) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                    let w = k * d;
                    let mut dx = vec![0.0; l * d];
                    for i in 0..l {
                        for j in 0..(*k).min(l - i) {
                            add_into(&mut dx[(i + j) * d..(i + j + 1) * d], &dy[i * w + j * d..i * w + (j + 1) * d]);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::LogClamped { x, floor } => {
                    let xv = nodes[x.0].value.as_slice();
                    let dx = dy
                        .iter()
                        .zip(xv)
                        .map(|(&g, &v)| if v > *floor { g / v } else { 0.0 })
                        .collect();
                    acc(&mut grads, *x, dx);
                }
                Op::Index { x, i } => {
                    let mut dx = vec![0.0; nodes[x.0].value.as_slice().len()];
                    dx[*i] = dy[0];
                    acc(&mut grads, *x, dx);
                }
            }
        }
        self.grads = grads;
        self.sparse = sparse;
        Ok(())
    }

    /// Dense gradient of `v` after `backward`; `None` if no gradient reached it.
    pub fn grad(&self, v: Var) -> Option<Vec<f64>> {
        let dense = self.grads.get(v.0).and_then(|g| g.clone());
        match (dense, self.sparse.get(&v.0)) {
            (d, None) => d,
            (d, Some(rows)) => {
                let len = self.value(v).len();
                let width = *self.shape(v).last().unwrap();
                let mut out = d.unwrap_or_else(|| vec![0.0; len]);
                for (&r, g) in rows {
                    add_into(&mut out[r * width..(r + 1) * width], g);
                }
                Some(out)
            }
        }
    }

    /// Gradients of every bound parameter, in binding order. Parameters that
    /// received no gradient are omitted.
    pub fn param_grads(&self) -> Vec<(String, ParamGrad)> {
        let mut out = Vec::new();
        for (name, v) in &self.params {
            let dense = self.grads.get(v.0).and_then(|g| g.as_ref());
            let grad = match (dense, self.sparse.get(&v.0)) {
                (None, None) => continue,
                (Some(d), None) => ParamGrad::Dense(d.clone()),
                (None, Some(rows)) => ParamGrad::Rows {
                    width: *self.shape(*v).last().unwrap(),
                    rows: rows.clone(),
                },
                (Some(_), Some(_)) => ParamGrad::Dense(self.grad(*v).unwrap()),
            };
            out.push((name.clone(), grad));
        }
        out
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }
}
