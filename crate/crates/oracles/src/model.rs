//! Brute-force forward pass of every model component and of the whole model.

use ragat::classifier::{ModelParams, Sample, PROB_FLOOR};
use ragat::cograph::Adjacency;
use ragat::numerics::Tensor;
use ragat::semantic::{ConvBankParams, GruParams, MhaParams, MASKED_KEY_BIAS};
use ragat::structural::BigcnParams;

use crate::real::Real;

pub type Mat<R> = Vec<Vec<R>>;

pub fn lift<R: Real>(t: &Tensor) -> Mat<R> {
    let (r, c) = (t.shape()[0], t.numel() / t.shape()[0]);
    (0..r).map(|i| (0..c).map(|j| R::of(t.data()[i * c + j])).collect()).collect()
}

pub fn lift_vec<R: Real>(t: &Tensor) -> Vec<R> {
    t.data().iter().map(|&v| R::of(v)).collect()
}

pub fn flatten<R: Real>(m: &Mat<R>) -> Vec<f64> {
    m.iter().flatten().map(Real::to_f64).collect()
}

fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).fold(R::zero(), |s, (x, y)| s + x.clone() * y.clone())
}

/// `x W` for a row vector `x` and `W` stored `in×out`.
fn vec_mat<R: Real>(x: &[R], w: &Mat<R>) -> Vec<R> {
    let out = w[0].len();
    (0..out)
        .map(|j| x.iter().zip(w).fold(R::zero(), |s, (xi, row)| s + xi.clone() * row[j].clone()))
        .collect()
}

fn add_bias<R: Real>(x: Vec<R>, b: Option<&Tensor>) -> Vec<R> {
    match b {
        None => x,
        Some(b) => x.into_iter().zip(b.data()).map(|(v, &bb)| v + R::of(bb)).collect(),
    }
}

/// `out[i][f]` of kernel size `k` is `relu(b_f + Σ_t Σ_c W[f][t][c] e[i+t][c])`
/// with rows past the end of `e` treated as zeros; kernel blocks are
/// concatenated in declaration order.
pub fn conv_bank<R: Real>(e: &Mat<R>, bank: &ConvBankParams) -> Mat<R> {
    let len = e.len();
    let d = e[0].len();
    let mut out: Mat<R> = vec![Vec::new(); len];
    for kernel in &bank.kernels {
        let k = kernel.size;
        let filters = kernel.weight.shape()[0];
        let w = kernel.weight.data();
        for (i, row) in out.iter_mut().enumerate() {
            for f in 0..filters {
                let mut s = R::of(kernel.bias.data()[f]);
                for t in 0..k {
                    if i + t >= len {
                        continue;
                    }
                    for c in 0..d {
                        s = s + R::of(w[(f * k + t) * d + c]) * e[i + t][c].clone();
                    }
                }
                row.push(s.relu());
            }
        }
    }
    out
}

/// One direction of the recurrence, from a zero state.
pub fn gru_pass<R: Real>(seq: &Mat<R>, mask: &[bool], p: &GruParams, reverse: bool) -> Mat<R> {
    let hidden = p.u_z.shape()[0];
    let (wz, wr, wh) = (lift::<R>(&p.w_z), lift::<R>(&p.w_r), lift::<R>(&p.w_h));
    let (uz, ur, uh) = (lift::<R>(&p.u_z), lift::<R>(&p.u_r), lift::<R>(&p.u_h));
    let mut h = vec![R::zero(); hidden];
    let mut out = vec![vec![R::zero(); hidden]; seq.len()];
    let order: Vec<usize> = if reverse {
        (0..seq.len()).rev().collect()
    } else {
        (0..seq.len()).collect()
    };
    for t in order {
        if !mask[t] {
            continue;
        }
        let x = &seq[t];
        let pre = |w: &Mat<R>, u: &Mat<R>, hin: &[R], b: Option<&Tensor>| {
            let a = vec_mat(x, w);
            let c = vec_mat(hin, u);
            add_bias(a.into_iter().zip(c).map(|(a, c)| a + c).collect(), b)
        };
        let z: Vec<R> = pre(&wz, &uz, &h, p.b_z.as_ref()).iter().map(Real::sigmoid).collect();
        let r: Vec<R> = pre(&wr, &ur, &h, p.b_r.as_ref()).iter().map(Real::sigmoid).collect();
        let rh: Vec<R> = r.iter().zip(&h).map(|(a, b)| a.clone() * b.clone()).collect();
        let cand: Vec<R> = pre(&wh, &uh, &rh, p.b_h.as_ref()).iter().map(Real::tanh).collect();
        h = (0..hidden)
            .map(|j| (R::of(1.0) - z[j].clone()) * h[j].clone() + z[j].clone() * cand[j].clone())
            .collect();
        out[t] = h.clone();
    }
    out
}

/// Forward states, with the right-to-left states appended per row when a
/// backward direction is given.
pub fn gru<R: Real>(seq: &Mat<R>, mask: &[bool], fwd: &GruParams, bwd: Option<&GruParams>) -> Mat<R> {
    let f = gru_pass(seq, mask, fwd, false);
    match bwd {
        None => f,
        Some(b) => {
            let back = gru_pass(seq, mask, b, true);
            f.into_iter().zip(back).map(|(mut a, b)| {
                a.extend(b);
                a
            }).collect()
        }
    }
}

/// Per head `softmax(q_i·k_j/√d_k + m_j) v_j`, heads concatenated and
/// projected; masked query rows are zero.
pub fn mha<R: Real>(h: &Mat<R>, mask: &[bool], p: &MhaParams) -> Mat<R> {
    let len = h.len();
    let d = p.dim();
    let dk = d / p.heads;
    let project = |w: &Tensor| -> Mat<R> {
        let w = lift::<R>(w);
        h.iter().map(|row| vec_mat(row, &w)).collect()
    };
    let (q, k, v) = (project(&p.w_q), project(&p.w_k), project(&p.w_v));
    let wo = lift::<R>(&p.w_o);
    let scale = R::of(1.0) / R::of(dk as f64).sqrt();
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        if !mask[i] {
            out.push(vec![R::zero(); d]);
            continue;
        }
        let mut cat = Vec::with_capacity(d);
        for head in 0..p.heads {
            let cols = head * dk..(head + 1) * dk;
            let scores: Vec<R> = (0..len)
                .map(|j| {
                    let s = dot(&q[i][cols.clone()], &k[j][cols.clone()]) * scale.clone();
                    if mask[j] {
                        s
                    } else {
                        s + R::of(MASKED_KEY_BIAS)
                    }
                })
                .collect();
            let m = scores.iter().cloned().fold(scores[0].clone(), R::max);
            let ex: Vec<R> = scores.iter().map(|s| (s.clone() - m.clone()).exp()).collect();
            let z = ex.iter().cloned().fold(R::zero(), |a, b| a + b);
            for c in cols {
                let mut acc = R::zero();
                for j in 0..len {
                    acc = acc + ex[j].clone() / z.clone() * v[j][c].clone();
                }
                cat.push(acc);
            }
        }
        out.push(vec_mat(&cat, &wo));
    }
    out
}

/// `[relu(Σ_j A_ij x_j W_f + b_f) ; relu(Σ_j A_ji x_j W_b + b_b)]` per node.
pub fn bigcn<R: Real>(x: &Mat<R>, adj: &Adjacency, p: &BigcnParams) -> Mat<R> {
    let n = x.len();
    let d = x[0].len();
    let (wf, wb) = (lift::<R>(&p.w_f), lift::<R>(&p.w_b));
    (0..n)
        .map(|i| {
            let mut fwd = vec![R::zero(); d];
            let mut back = vec![R::zero(); d];
            for j in 0..n {
                let (aij, aji) = (adj.get(i, j), adj.get(j, i));
                for c in 0..d {
                    if aij != 0.0 {
                        fwd[c] = fwd[c].clone() + R::of(aij) * x[j][c].clone();
                    }
                    if aji != 0.0 {
                        back[c] = back[c].clone() + R::of(aji) * x[j][c].clone();
                    }
                }
            }
            let mut row: Vec<R> = add_bias(vec_mat(&fwd, &wf), p.b_f.as_ref()).iter().map(Real::relu).collect();
            row.extend(add_bias(vec_mat(&back, &wb), p.b_b.as_ref()).iter().map(Real::relu));
            row
        })
        .collect()
}

pub fn mean_rows<R: Real>(h: &Mat<R>, mask: &[bool]) -> Vec<R> {
    let count = mask.iter().filter(|&&m| m).count();
    let mut acc = vec![R::zero(); h[0].len()];
    for (row, _) in h.iter().zip(mask).filter(|(_, &m)| m) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a = a.clone() + v.clone();
        }
    }
    acc.into_iter().map(|a| a / R::of(count as f64)).collect()
}

pub struct Forward<R> {
    pub h_attn: Vec<R>,
    pub h_gcn: Vec<R>,
    pub probs: [R; 2],
    pub loss: Option<R>,
}

/// The whole inference-mode model over the full (padded) length.
pub fn model<R: Real>(p: &ModelParams, sample: &Sample) -> Forward<R> {
    let ex = &sample.example;
    let mask = &ex.mask;
    let table = lift::<R>(&p.embedding);
    let e: Mat<R> = ex.ids.iter().map(|&id| table[id].clone()).collect();
    let maps = conv_bank(&e, &p.conv);
    let mut seq = gru(&maps, mask, &p.gru_fwd, p.gru_bwd.as_ref());
    if let Some(proj) = &p.gru_proj {
        let w = lift::<R>(proj);
        seq = seq.iter().map(|r| vec_mat(r, &w)).collect();
    }
    let att = mha(&seq, mask, &p.mha);
    let h_attn = mean_rows(&att, mask);
    let x = match &p.gcn_embedding {
        Some(t) => {
            let t = lift::<R>(t);
            ex.ids.iter().map(|&id| t[id].clone()).collect()
        }
        None => e,
    };
    let graph = bigcn(&x, &sample.adjacency, &p.gcn);
    let h_gcn = mean_rows(&graph, mask);
    let fused: Vec<R> = h_attn.iter().chain(&h_gcn).cloned().collect();
    let logits = add_bias(vec_mat(&fused, &lift(&p.head.w)), Some(&p.head.b));
    let m = logits[0].clone().max(logits[1].clone());
    let e0 = (logits[0].clone() - m.clone()).exp();
    let e1 = (logits[1].clone() - m).exp();
    let z = e0.clone() + e1.clone();
    let probs = [e0 / z.clone(), e1 / z];
    let loss = ex.label.map(|l| -probs[l as usize].clone().max(R::of(PROB_FLOOR)).ln());
    Forward {
        h_attn,
        h_gcn,
        probs,
        loss,
    }
}
