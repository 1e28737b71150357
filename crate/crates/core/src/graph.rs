//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Graph`] records operations for one forward pass. Parameters are read
//! in place from a borrowed [`ParamStore`], so a frozen store can back any
//! number of concurrent graphs. [`Graph::backward`] accumulates parameter
//! gradients into a caller-owned [`Gradients`] buffer, which lets a batch be
//! processed one utterance graph at a time.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc;
use crate::tensor::{gemm, gemm_strided, log_softmax_row, Mat};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamId(pub usize);

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Order-sensitive FNV-1a digest over names and raw bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for (name, t) in self.names.iter().zip(&self.tensors) {
            name.bytes().for_each(&mut eat);
            for v in &t.data {
                v.to_bits().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }
}

/// Gradient accumulator shaped like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Mat>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients { grads: store.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.grads[id.0]
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().for_each(|g| g.scale_assign(s));
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.grads.iter().flat_map(|g| g.data.iter()).map(|v| v * v).sum())
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Glu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat, rstd: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<Mat> },
    Embed { table: Var, ids: Vec<Vec<usize>> },
    Unfold { x: Var, kernel: usize, stride: usize, pad: usize },
    Dropout { x: Var, mask: Vec<f64> },
    Reshape(Var),
    SmoothedCe { logits: Var, grad: Mat },
    Ctc { logits: Var, grad: Mat },
    SquaredError { pred: Var, diff: Vec<f64> },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<'p> Graph<'p> {
    /// Inference graph: dropout disabled.
    pub fn new(store: &'p ParamStore) -> Self {
        Graph { store, nodes: Vec::new(), training: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    /// Training graph with dropout masks drawn from `seed`.
    pub fn training(store: &'p ParamStore, seed: u64) -> Self {
        Graph { store, nodes: Vec::new(), training: true, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data[0]
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    /// `x W + b` with `W` of shape `in x out` and `b` of shape `1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let mut out = Mat::zeros(xv.rows, wv.cols);
        if let Some(b) = b {
            let bv = self.value(b);
            for r in 0..out.rows {
                out.row_mut(r).copy_from_slice(&bv.data);
            }
            gemm(xv, false, wv, false, &mut out, 1.0);
        } else {
            gemm(xv, false, wv, false, &mut out, 0.0);
        }
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Gated linear unit over columns: `left * sigmoid(right)`.
    pub fn glu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert!(av.cols.is_multiple_of(2), "glu needs an even number of columns");
        let half = av.cols / 2;
        let mut out = Mat::zeros(av.rows, half);
        for r in 0..av.rows {
            let row = av.row(r);
            for c in 0..half {
                out.set(r, c, row[c] * sigmoid(row[half + c]));
            }
        }
        self.push(out, Op::Glu(a))
    }

    /// Row-wise layer normalization with learned gain and bias (`1 x d`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, d) = (xv.rows, xv.cols);
        let mut xhat = Mat::zeros(rows, d);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / libm::sqrt(var + LN_EPS);
            rstd.push(rs);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gg), bb) in out.row_mut(r).iter_mut().zip(&g.data).zip(&b.data) {
                *o = *o * gg + bb;
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd })
    }

    /// Scaled dot-product attention over `heads` column blocks. With
    /// `causal`, query `i` only sees keys `0..=i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (lq, lk, d) = (qv.rows, kv.rows, qv.cols);
        assert!(d % heads == 0, "model dim must divide into heads");
        assert_eq!(kv.cols, d);
        assert_eq!(vv.rows, lk);
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut out = Mat::zeros(lq, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * dh;
            let mut p = Mat::zeros(lq, lk);
            gemm_strided(
                lq, dh, lk, scale, &qv.data[off..], d as isize, 1, &kv.data[off..], 1, d as isize,
                0.0, &mut p.data, lk as isize, 1,
            );
            for i in 0..lq {
                let row = p.row_mut(i);
                if causal {
                    for s in row.iter_mut().skip(i + 1) {
                        *s = f64::NEG_INFINITY;
                    }
                }
                softmax_in_place(row);
            }
            gemm_strided(
                lq, lk, dh, 1.0, &p.data, lk as isize, 1, &vv.data[off..], d as isize, 1, 0.0,
                &mut out.data[off..], d as isize, 1,
            );
            probs.push(p);
        }
        self.push(out, Op::Attention { q, k, v, heads, probs })
    }

    /// Row `i` of the output is the sum of `table` rows listed in `ids[i]`.
    pub fn embed(&mut self, table: Var, ids: Vec<Vec<usize>>) -> Var {
        let tv = self.value(table);
        let mut out = Mat::zeros(ids.len(), tv.cols);
        for (r, row_ids) in ids.iter().enumerate() {
            let dst = out.row_mut(r);
            for &id in row_ids {
                for (o, t) in dst.iter_mut().zip(tv.row(id)) {
                    *o += t;
                }
            }
        }
        self.push(out, Op::Embed { table, ids })
    }

    /// im2col for a strided 1-D convolution with zero padding: output row
    /// `t` concatenates input rows `t*stride - pad .. t*stride - pad + kernel`.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (t_in, c) = (xv.rows, xv.cols);
        let t_out = conv_out_len(t_in, kernel, stride, pad);
        let mut out = Mat::zeros(t_out, kernel * c);
        for t in 0..t_out {
            for j in 0..kernel {
                let src = (t * stride + j) as isize - pad as isize;
                if src >= 0 && (src as usize) < t_in {
                    out.row_mut(t)[j * c..(j + 1) * c].copy_from_slice(xv.row(src as usize));
                }
            }
        }
        self.push(out, Op::Unfold { x, kernel, stride, pad })
    }

    /// Inverted dropout; identity for inference graphs or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> =
            (0..n).map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let mut out = self.value(x).clone();
        for (o, m) in out.data.iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask })
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(out.len(), rows * cols, "reshape changes element count");
        out.rows = rows;
        out.cols = cols;
        self.push(out, Op::Reshape(x))
    }

    /// Sum over rows of label-smoothed cross-entropy. Rows whose target is
    /// `None` are excluded. Per row:
    /// `(1 - eps) * nll(target) + eps * mean_c nll(c)`.
    pub fn smoothed_ce(&mut self, logits: Var, targets: &[Option<usize>], eps: f64) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len());
        let v = lv.cols as f64;
        let mut grad = Mat::zeros(lv.rows, lv.cols);
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let mut lp = lv.row(r).to_vec();
            log_softmax_row(&mut lp);
            let mean_nll = -lp.iter().sum::<f64>() / v;
            total += (1.0 - eps) * -lp[t] + eps * mean_nll;
            let g = grad.row_mut(r);
            for (c, gc) in g.iter_mut().enumerate() {
                *gc = libm::exp(lp[c]) - eps / v;
            }
            g[t] -= 1.0 - eps;
        }
        self.push(Mat::from_vec(1, 1, vec![total]), Op::SmoothedCe { logits, grad })
    }

    /// CTC negative log-likelihood of `target` under `log_softmax(logits)`.
    /// Returns `None` (and records nothing) when the target is infeasible.
    pub fn ctc(&mut self, logits: Var, target: &[usize], blank: usize) -> Option<Var> {
        let lv = self.value(logits);
        let mut lp = lv.clone();
        for r in 0..lp.rows {
            log_softmax_row(lp.row_mut(r));
        }
        let (loss, g_lp) = ctc::ctc_loss_and_grad(&lp, target, blank).ok()?;
        if !loss.is_finite() {
            return None;
        }
        // chain through log-softmax: dz = g - softmax * sum(g)
        let mut grad = g_lp;
        for r in 0..grad.rows {
            let s: f64 = grad.row(r).iter().sum();
            let lrow = lp.row(r).to_vec();
            for (gc, l) in grad.row_mut(r).iter_mut().zip(lrow) {
                *gc -= libm::exp(l) * s;
            }
        }
        Some(self.push(Mat::from_vec(1, 1, vec![loss]), Op::Ctc { logits, grad }))
    }

    /// Sum of squared differences between a flattened node and `target`.
    pub fn squared_error(&mut self, pred: Var, target: &[f64]) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.len(), target.len());
        let diff: Vec<f64> = pv.data.iter().zip(target).map(|(p, t)| p - t).collect();
        let total = diff.iter().map(|d| d * d).sum();
        self.push(Mat::from_vec(1, 1, vec![total]), Op::SquaredError { pred, diff })
    }

    /// `sum_i w_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let total = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        self.push(Mat::from_vec(1, 1, vec![total]), Op::WeightedSum(terms))
    }

    /// Backpropagates from the scalar `root`, adding `scale * d root / d p`
    /// into `grads` for every parameter `p` reached.
    pub fn backward(&self, root: Var, scale: f64, grads: &mut Gradients) {
        let mut adj: Vec<Option<Mat>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Mat::from_vec(1, 1, vec![scale]));
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.grads[id.0].add_assign(&g),
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    if self.needs_grad(*x) {
                        let mut dx = Mat::zeros(xv.rows, xv.cols);
                        gemm(&g, false, wv, true, &mut dx, 0.0);
                        accumulate(&mut adj, *x, dx);
                    }
                    let mut dw = Mat::zeros(wv.rows, wv.cols);
                    gemm(xv, true, &g, false, &mut dw, 0.0);
                    accumulate(&mut adj, *w, dw);
                    if let Some(b) = b {
                        let mut db = Mat::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for (d, v) in db.data.iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.scale_assign(*s);
                    accumulate(&mut adj, *a, d);
                }
                Op::Relu(a) => {
                    let out = node.value.as_ref().unwrap();
                    let mut d = g;
                    for (dv, o) in d.data.iter_mut().zip(&out.data) {
                        if *o <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::Glu(a) => {
                    let av = self.value(*a);
                    let half = av.cols / 2;
                    let mut d = Mat::zeros(av.rows, av.cols);
                    for r in 0..av.rows {
                        let row = av.row(r);
                        for c in 0..half {
                            let s = sigmoid(row[half + c]);
                            let go = g.get(r, c);
                            d.set(r, c, go * s);
                            d.set(r, half + c, go * row[c] * s * (1.0 - s));
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let gv = self.value(*gain);
                    let (rows, d) = (xhat.rows, xhat.cols);
                    let mut dg = Mat::zeros(1, d);
                    let mut db = Mat::zeros(1, d);
                    let mut dx = Mat::zeros(rows, d);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let (gr, xr) = (g.row(r), xhat.row(r));
                        for c in 0..d {
                            dg.data[c] += gr[c] * xr[c];
                            db.data[c] += gr[c];
                            dxhat[c] = gr[c] * gv.data[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx =
                            dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = rstd[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
                        }
                    }
                    accumulate(&mut adj, *gain, dg);
                    accumulate(&mut adj, *bias, db);
                    accumulate(&mut adj, *x, dx);
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (lq, lk, d) = (qv.rows, kv.rows, qv.cols);
                    let dh = d / heads;
                    let scale = 1.0 / libm::sqrt(dh as f64);
                    let mut dq = Mat::zeros(lq, d);
                    let mut dk = Mat::zeros(lk, d);
                    let mut dv = Mat::zeros(lk, d);
                    let mut dp = Mat::zeros(lq, lk);
                    for (h, p) in probs.iter().enumerate() {
                        let off = h * dh;
                        // dV_h = P^T dO_h
                        gemm_strided(
                            lk, lq, dh, 1.0, &p.data, 1, lk as isize, &g.data[off..], d as isize,
                            1, 0.0, &mut dv.data[off..], d as isize, 1,
                        );
                        // dP = dO_h V_h^T
                        gemm_strided(
                            lq, dh, lk, 1.0, &g.data[off..], d as isize, 1, &vv.data[off..], 1,
                            d as isize, 0.0, &mut dp.data, lk as isize, 1,
                        );
                        // dS = P * (dP - rowsum(dP * P))
                        for i in 0..lq {
                            let pr = p.row(i);
                            let dr = dp.row_mut(i);
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            for (dv_, pv_) in dr.iter_mut().zip(pr) {
                                *dv_ = pv_ * (*dv_ - dot);
                            }
                        }
                        // dQ_h = scale * dS K_h ; dK_h = scale * dS^T Q_h
                        gemm_strided(
                            lq, lk, dh, scale, &dp.data, lk as isize, 1, &kv.data[off..],
                            d as isize, 1, 0.0, &mut dq.data[off..], d as isize, 1,
                        );
                        gemm_strided(
                            lk, lq, dh, scale, &dp.data, 1, lk as isize, &qv.data[off..],
                            d as isize, 1, 0.0, &mut dk.data[off..], d as isize, 1,
                        );
                    }
                    accumulate(&mut adj, *q, dq);
                    accumulate(&mut adj, *k, dk);
                    accumulate(&mut adj, *v, dv);
                }
                Op::Embed { table, ids } => {
                    let tv = self.value(*table);
                    let mut dt = Mat::zeros(tv.rows, tv.cols);
                    for (r, row_ids) in ids.iter().enumerate() {
                        for &id in row_ids {
                            for (o, gv) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                                *o += gv;
                            }
                        }
                    }
                    accumulate(&mut adj, *table, dt);
                }
                Op::Unfold { x, kernel, stride, pad } => {
                    if self.needs_grad(*x) {
                        let xv = self.value(*x);
                        let (t_in, c) = (xv.rows, xv.cols);
                        let mut dx = Mat::zeros(t_in, c);
                        for t in 0..g.rows {
                            for j in 0..*kernel {
                                let src = (t * stride + j) as isize - *pad as isize;
                                if src >= 0 && (src as usize) < t_in {
                                    let gs = &g.row(t)[j * c..(j + 1) * c];
                                    for (o, v) in dx.row_mut(src as usize).iter_mut().zip(gs) {
                                        *o += v;
                                    }
                                }
                            }
                        }
                        accumulate(&mut adj, *x, dx);
                    }
                }
                Op::Dropout { x, mask } => {
                    let mut d = g;
                    for (dv, m) in d.data.iter_mut().zip(mask) {
                        *dv *= m;
                    }
                    accumulate(&mut adj, *x, d);
                }
                Op::Reshape(x) => {
                    let xv = self.value(*x);
                    let mut d = g;
                    d.rows = xv.rows;
                    d.cols = xv.cols;
                    accumulate(&mut adj, *x, d);
                }
                Op::SmoothedCe { logits, grad } | Op::Ctc { logits, grad } => {
                    let mut d = grad.clone();
                    d.scale_assign(g.data[0]);
                    accumulate(&mut adj, *logits, d);
                }
                Op::SquaredError { pred, diff } => {
                    let pv = self.value(*pred);
                    let s = 2.0 * g.data[0];
                    let d = Mat::from_vec(pv.rows, pv.cols, diff.iter().map(|v| s * v).collect());
                    accumulate(&mut adj, *pred, d);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        accumulate(&mut adj, v, Mat::from_vec(1, 1, vec![w * g.data[0]]));
                    }
                }
            }
        }
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Input)
    }
}

fn accumulate(adj: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Output length of a strided, zero-padded 1-D convolution.
pub fn conv_out_len(t_in: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (t_in + 2 * pad).saturating_sub(kernel) / stride + 1
}
