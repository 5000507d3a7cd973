//! Reverse-mode automatic differentiation over a recorded computation graph.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the nodes in reverse creation order and accumulates gradients into
//! the inputs that require them. Nodes that only depend on frozen parameters
//! or constant inputs never receive gradient work.

use std::collections::HashMap;

use super::tensor::{gemm, Layout};
use super::{ParamId, ParamStore, Tensor2D};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-query-row key range `[start, end)` for [`Graph::attention`].
pub type KeyRange = (usize, usize);

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor2D, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Attention(Box<AttentionCache>),
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Tensor2D, count: usize },
    ScalarWithGrad { x: Var, grad: Tensor2D },
    LinearCombination(Vec<(Var, f64)>),
    Frobenius { x: Var, weights: Tensor2D },
}

struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    ranges: Vec<KeyRange>,
    heads: usize,
    offsets: Vec<usize>,
    probs: Vec<f64>,
}

struct Node {
    value: Tensor2D,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor2D>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor2D> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2D {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor2D, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant or differentiable input.
    pub fn input(&mut self, value: Tensor2D, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Brings a parameter into the graph; repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.trainable);
        self.params.insert(id, v);
        v
    }

    /// Adds gradients of trainable parameters into their `grad` buffers.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        let mut pairs: Vec<_> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        pairs.sort_unstable_by_key(|(id, _)| *id);
        for (id, v) in pairs {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            if let Some(g) = grads.wrt(v) {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.rows(), "matmul {:?} x {:?}", av.shape(), bv.shape());
        let mut out = Tensor2D::zeros(av.rows(), bv.cols());
        gemm(Layout::N, Layout::N, av, bv, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shapes");
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut out = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!((1, out.cols()), b.shape(), "bias shape");
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += x;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(out, Op::AddRow(a, bias), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = logsumexp(row);
            for x in row {
                *x -= lse;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    /// Row-wise layer normalization with `1 x cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        assert_eq!(self.value(gain).shape(), (1, cols), "layer norm gain");
        assert_eq!(self.value(bias).shape(), (1, cols), "layer norm bias");
        let mut xhat = Tensor2D::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg)
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Tensor2D::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            assert!(id < t.rows(), "gather index {id} out of {} rows", t.rows());
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        let rg = self.rg(table);
        self.push(out, Op::Gather { table, ids: ids.to_vec() }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor2D::new(rows, cols, data).expect("shape"), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let out = self.value(x).rows_slice(start, end);
        let rg = self.rg(x);
        self.push(out, Op::SliceRows { x, start }, rg)
    }

    /// Multi-head scaled dot-product attention where query row `i` attends
    /// only to key rows `ranges[i]`. Keys outside the range get exactly zero
    /// weight; an empty range yields a zero output row.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, ranges: Vec<KeyRange>, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        assert_eq!(ranges.len(), qv.rows(), "one key range per query row");
        assert_eq!(kv.shape(), vv.shape(), "key/value shapes");
        assert_eq!(kv.cols(), d, "query/key width");
        assert!(heads >= 1 && d % heads == 0, "{d} not divisible into {heads} heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut offsets = Vec::with_capacity(ranges.len() + 1);
        let mut total = 0;
        for &(lo, hi) in &ranges {
            assert!(lo <= hi && hi <= kv.rows(), "key range out of bounds");
            offsets.push(total);
            total += (hi - lo) * heads;
        }
        offsets.push(total);
        let mut probs = vec![0.0; total];
        let mut out = Tensor2D::zeros(qv.rows(), d);
        for (i, &(lo, hi)) in ranges.iter().enumerate() {
            let len = hi - lo;
            if len == 0 {
                continue;
            }
            for h in 0..heads {
                let cs = h * dh..(h + 1) * dh;
                let qrow = &qv.row(i)[cs.clone()];
                let p = &mut probs[offsets[i] + h * len..offsets[i] + (h + 1) * len];
                for (j, pj) in (lo..hi).zip(p.iter_mut()) {
                    *pj = dot(qrow, &kv.row(j)[cs.clone()]) * scale;
                }
                softmax_in_place(p);
                let orow = &mut out.row_mut(i)[cs.clone()];
                for (j, &pj) in (lo..hi).zip(p.iter()) {
                    for (o, x) in orow.iter_mut().zip(&vv.row(j)[cs.clone()]) {
                        *o += pj * x;
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let cache = AttentionCache { q, k, v, ranges, heads, offsets, probs };
        self.push(out, Op::Attention(Box::new(cache)), rg)
    }

    /// Mean negative log-likelihood of `targets` over rows with `mask` set.
    /// With no masked-in rows the loss is zero and so are the gradients.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Var {
        let lv = self.value(logits);
        assert_eq!(targets.len(), lv.rows(), "one target per row");
        assert_eq!(mask.len(), lv.rows(), "one mask flag per row");
        let mut probs = lv.clone();
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..lv.rows() {
            let row = probs.row_mut(r);
            let lse = logsumexp(row);
            if mask[r] {
                assert!(targets[r] < row.len(), "target out of vocabulary");
                total += lse - row[targets[r]];
                count += 1;
            }
            for x in row {
                *x = (*x - lse).exp();
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(logits);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count };
        self.push(Tensor2D::scalar(loss), op, rg)
    }

    /// Scalar node whose value and gradient with respect to `x` were computed
    /// elsewhere (for example by a dynamic-programming loss).
    pub fn scalar_with_grad(&mut self, x: Var, value: f64, grad: Tensor2D) -> Var {
        assert_eq!(grad.shape(), self.value(x).shape(), "custom gradient shape");
        let rg = self.rg(x);
        self.push(Tensor2D::scalar(value), Op::ScalarWithGrad { x, grad }, rg)
    }

    /// `sum_i c_i * s_i` over 1x1 nodes.
    pub fn linear_combination(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut total = 0.0;
        for &(v, c) in terms {
            assert_eq!(self.value(v).shape(), (1, 1), "linear combination of non-scalars");
            total += c * self.value(v).item();
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(Tensor2D::scalar(total), Op::LinearCombination(terms.to_vec()), rg)
    }

    /// `sum(x * weights)` for a constant weight matrix.
    pub fn frobenius(&mut self, x: Var, weights: Tensor2D) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), weights.shape(), "frobenius shapes");
        let total = xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        self.push(Tensor2D::scalar(total), Op::Frobenius { x, weights }, rg)
    }

    /// Reverse sweep from a 1x1 node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Tensor2D>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2D::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.backprop_node(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor2D, grads: &mut [Option<Tensor2D>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let bv = self.value(*b);
                    let mut da = Tensor2D::zeros(g.rows(), bv.rows());
                    gemm(Layout::N, Layout::T, g, bv, &mut da, 0.0);
                    accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let av = self.value(*a);
                    let mut db = Tensor2D::zeros(av.cols(), g.cols());
                    gemm(Layout::T, Layout::N, av, g, &mut db, 0.0);
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                for &x in [a, b] {
                    if self.rg(x) {
                        accumulate(grads, x, g.clone());
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*bias) {
                    let mut db = Tensor2D::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(grads, *bias, db);
                }
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::Gelu(a) => {
                let xv = self.value(*a);
                let mut da = g.clone();
                for (d, x) in da.data_mut().iter_mut().zip(xv.data()) {
                    *d *= gelu_grad(*x);
                }
                accumulate(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut da = Tensor2D::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot_gy = dot(g.row(r), y.row(r));
                    for ((o, gi), yi) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yi * (gi - dot_gy);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut da = Tensor2D::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    for ((o, gi), yi) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = gi - yi.exp() * gsum;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (rows, cols) = xhat.shape();
                let gv = self.value(*gain).data();
                if self.rg(*x) {
                    let mut dx = Tensor2D::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = xhat.row(r);
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            let d = gr[c] * gv[c];
                            mean_d += d;
                            mean_dx += d * xh[c];
                        }
                        mean_d /= cols as f64;
                        mean_dx /= cols as f64;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            let d = gr[c] * gv[c];
                            *o = inv_std[r] * (d - mean_d - xh[c] * mean_dx);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.rg(*gain) {
                    let mut dg = Tensor2D::zeros(1, cols);
                    for r in 0..rows {
                        for ((o, gi), xh) in dg.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *o += gi * xh;
                        }
                    }
                    accumulate(grads, *gain, dg);
                }
                if self.rg(*bias) {
                    let mut db = Tensor2D::zeros(1, cols);
                    for r in 0..rows {
                        for (o, gi) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *o += gi;
                        }
                    }
                    accumulate(grads, *bias, db);
                }
            }
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let mut dt = Tensor2D::zeros(t.rows(), t.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, gi) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o += gi;
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.rg(p) {
                        accumulate(grads, p, g.rows_slice(start, start + rows));
                    }
                    start += rows;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let mut dx = Tensor2D::zeros(xv.rows(), xv.cols());
                let w = xv.cols();
                dx.data_mut()[start * w..(start + g.rows()) * w].copy_from_slice(g.data());
                accumulate(grads, *x, dx);
            }
            Op::Attention(cache) => self.backprop_attention(cache, g, grads),
            Op::CrossEntropy { logits, targets, mask, probs, count } => {
                let mut dl = Tensor2D::zeros(probs.rows(), probs.cols());
                if *count > 0 {
                    let s = g.item() / *count as f64;
                    for r in 0..probs.rows() {
                        if !mask[r] {
                            continue;
                        }
                        for (o, p) in dl.row_mut(r).iter_mut().zip(probs.row(r)) {
                            *o = p * s;
                        }
                        dl.row_mut(r)[targets[r]] -= s;
                    }
                }
                accumulate(grads, *logits, dl);
            }
            Op::ScalarWithGrad { x, grad } => accumulate(grads, *x, grad.map(|v| v * g.item())),
            Op::LinearCombination(terms) => {
                for &(v, c) in terms {
                    if self.rg(v) {
                        accumulate(grads, v, Tensor2D::scalar(c * g.item()));
                    }
                }
            }
            Op::Frobenius { x, weights } => accumulate(grads, *x, weights.map(|w| w * g.item())),
        }
    }

    fn backprop_attention(&self, c: &AttentionCache, g: &Tensor2D, grads: &mut [Option<Tensor2D>]) {
        let (qv, kv, vv) = (self.value(c.q), self.value(c.k), self.value(c.v));
        let d = qv.cols();
        let dh = d / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor2D::zeros(qv.rows(), d);
        let mut dk = Tensor2D::zeros(kv.rows(), d);
        let mut dv = Tensor2D::zeros(vv.rows(), d);
        let mut dp = Vec::new();
        for (i, &(lo, hi)) in c.ranges.iter().enumerate() {
            let len = hi - lo;
            if len == 0 {
                continue;
            }
            for h in 0..c.heads {
                let cs = h * dh..(h + 1) * dh;
                let p = &c.probs[c.offsets[i] + h * len..c.offsets[i] + (h + 1) * len];
                let grow = &g.row(i)[cs.clone()];
                dp.clear();
                let mut weighted = 0.0;
                for (j, &pj) in (lo..hi).zip(p) {
                    let dpj = dot(grow, &vv.row(j)[cs.clone()]);
                    weighted += pj * dpj;
                    dp.push(dpj);
                    for (o, gi) in dv.row_mut(j)[cs.clone()].iter_mut().zip(grow) {
                        *o += pj * gi;
                    }
                }
                for ((j, &pj), &dpj) in (lo..hi).zip(p).zip(&dp) {
                    let ds = pj * (dpj - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let krow = &kv.row(j)[cs.clone()];
                    for (o, x) in dq.row_mut(i)[cs.clone()].iter_mut().zip(krow) {
                        *o += ds * x;
                    }
                    let qrow = &qv.row(i)[cs.clone()];
                    for (o, x) in dk.row_mut(j)[cs.clone()].iter_mut().zip(qrow) {
                        *o += ds * x;
                    }
                }
            }
        }
        if self.rg(c.q) {
            accumulate(grads, c.q, dq);
        }
        if self.rg(c.k) {
            accumulate(grads, c.k, dk);
        }
        if self.rg(c.v) {
            accumulate(grads, c.v, dv);
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor2D>], v: Var, g: Tensor2D) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-shifted log-sum-exp; `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in xs.iter_mut() {
        *x /= z;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4;

/// `tanh` through a single `exp`, noticeably cheaper than libm's `tanh`.
fn fast_tanh(u: f64) -> f64 {
    1.0 - 2.0 / (1.0 + (2.0 * u).exp())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + fast_tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let t = fast_tanh(GELU_C * (x + 0.044715 * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
