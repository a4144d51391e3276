//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] borrows a [`ParamStore`] read-only and records every operation
//! applied to it. Inference and training share the same forward code; training
//! additionally calls [`Graph::backward`], which accumulates parameter
//! gradients into a [`Gradients`] buffer. Parameter values are never copied
//! into the tape.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nnet::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Sparse attention connectivity: for each query row, the key rows it may
/// read. Keys not listed receive exactly zero weight, which is the limit of an
/// additive `-inf` score mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionPattern {
    offsets: Vec<usize>,
    keys: Vec<usize>,
    num_keys: usize,
}

impl AttentionPattern {
    /// Every query sees every key.
    pub fn dense(num_queries: usize, num_keys: usize) -> Self {
        let mut offsets = Vec::with_capacity(num_queries + 1);
        let mut keys = Vec::with_capacity(num_queries * num_keys);
        offsets.push(0);
        for _ in 0..num_queries {
            keys.extend(0..num_keys);
            offsets.push(keys.len());
        }
        AttentionPattern {
            offsets,
            keys,
            num_keys,
        }
    }

    pub fn from_rows<I, R>(rows: I, num_keys: usize) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = usize>,
    {
        let mut offsets = vec![0];
        let mut keys = Vec::new();
        for row in rows {
            for key in row {
                if key >= num_keys {
                    return Err(Error::Shape(format!(
                        "attention key {key} out of range for {num_keys} keys"
                    )));
                }
                keys.push(key);
            }
            offsets.push(keys.len());
        }
        Ok(AttentionPattern {
            offsets,
            keys,
            num_keys,
        })
    }

    /// Build from a boolean mask (`true` = allowed).
    pub fn from_mask(mask: &[Vec<bool>], num_keys: usize) -> Result<Self> {
        for (r, row) in mask.iter().enumerate() {
            if row.len() != num_keys {
                return Err(Error::Shape(format!(
                    "mask row {r} has {} columns, expected {num_keys}",
                    row.len()
                )));
            }
        }
        Self::from_rows(
            mask.iter()
                .map(|row| row.iter().enumerate().filter(|(_, &a)| a).map(|(c, _)| c)),
            num_keys,
        )
    }

    pub fn num_queries(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_keys(&self) -> usize {
        self.num_keys
    }

    pub fn num_allowed(&self) -> usize {
        self.keys.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[usize] {
        &self.keys[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn to_mask(&self) -> Vec<Vec<bool>> {
        (0..self.num_queries())
            .map(|r| {
                let mut row = vec![false; self.num_keys];
                for &k in self.row(r) {
                    row[k] = true;
                }
                row
            })
            .collect()
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    Detach,
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        pattern: Arc<AttentionPattern>,
        probs: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    fn trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(Tensor::zeros(0, 0), Op::Param(id), true);
        self.param_vars.insert(id, v);
        v
    }

    /// Same value, gradient stopped.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Detach, false)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Shape(format!(
                "row {bad} out of range for table with {} rows",
                t.rows()
            )));
        }
        let out = t.select_rows(ids);
        let trainable = self.trainable(table);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            trainable,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let trainable = self.trainable(a) || self.trainable(b);
        Ok(self.push(out, Op::MatMul(a, b), trainable))
    }

    /// `x + b` with `b` a single row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "cannot broadcast {:?} over {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        let bias = bv.row(0);
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
                *o += b;
            }
        }
        let trainable = self.trainable(x) || self.trainable(b);
        Ok(self.push(out, Op::AddRow(x, b), trainable))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "add {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        let trainable = self.trainable(a) || self.trainable(b);
        Ok(self.push(out, Op::Add(a, b), trainable))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale(factor);
        let trainable = self.trainable(x);
        self.push(out, Op::Scale(x, factor), trainable)
    }

    /// Row-wise layer normalization with learned scale and shift (`1 × d`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.cols();
        if gv.shape() != (1, d) || bv.shape() != (1, d) {
            return Err(Error::Shape(format!(
                "layer norm parameters {:?}/{:?} for width {d}",
                gv.shape(),
                bv.shape()
            )));
        }
        let mut xhat = Tensor::zeros(xv.rows(), d);
        let mut out = Tensor::zeros(xv.rows(), d);
        let mut rstd = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(inv);
            let hrow = xhat.row_mut(r);
            for (h, v) in hrow.iter_mut().zip(row) {
                *h = (v - mean) * inv;
            }
            let orow = out.row_mut(r);
            for c in 0..d {
                orow[c] = xhat.get(r, c) * gv.get(0, c) + bv.get(0, c);
            }
        }
        let trainable = self.trainable(x) || self.trainable(gamma) || self.trainable(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            trainable,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let trainable = self.trainable(x);
        self.push(out, Op::Gelu(x), trainable)
    }

    /// Multi-head scaled dot-product attention restricted to `pattern`.
    ///
    /// `q` is `n_q × d`, `k` and `v` are `n_k × d`; the result is `n_q × d`.
    /// A query with no allowed keys yields a zero row.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        pattern: Arc<AttentionPattern>,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("{heads} heads cannot split width {d}")));
        }
        if kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows() {
            return Err(Error::Shape(format!(
                "attention q {:?}, k {:?}, v {:?}",
                qv.shape(),
                kv.shape(),
                vv.shape()
            )));
        }
        if pattern.num_queries() != qv.rows() || pattern.num_keys() != kv.rows() {
            return Err(Error::Shape(format!(
                "pattern {}x{} for {} queries and {} keys",
                pattern.num_queries(),
                pattern.num_keys(),
                qv.rows(),
                kv.rows()
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(qv.rows(), d);
        let mut probs = vec![0.0; pattern.num_allowed() * heads];
        let mut scores = Vec::new();
        for r in 0..qv.rows() {
            let keys = pattern.row(r);
            if keys.is_empty() {
                continue;
            }
            let base = pattern.offsets[r] * heads;
            for h in 0..heads {
                let lo = h * dh;
                let qh = &qv.row(r)[lo..lo + dh];
                scores.clear();
                scores.extend(keys.iter().map(|&key| dot(qh, &kv.row(key)[lo..lo + dh]) * scale));
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let p = &mut probs[base + h * keys.len()..base + (h + 1) * keys.len()];
                let orow = &mut out.row_mut(r)[lo..lo + dh];
                for ((pe, s), &key) in p.iter_mut().zip(&scores).zip(keys) {
                    *pe = s / sum;
                    for (o, val) in orow.iter_mut().zip(&vv.row(key)[lo..lo + dh]) {
                        *o += *pe * val;
                    }
                }
            }
        }
        let trainable = self.trainable(q) || self.trainable(k) || self.trainable(v);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                pattern,
                probs,
            },
            trainable,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&values)?;
        let trainable = parts.iter().any(|&p| self.trainable(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), trainable))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.rows() {
            return Err(Error::Shape(format!(
                "row slice {start}..{end} of {} rows",
                xv.rows()
            )));
        }
        let out = xv.slice_rows(start, end);
        let trainable = self.trainable(x);
        Ok(self.push(out, Op::SliceRows { x, start }, trainable))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).clone().reshape(rows, cols)?;
        let trainable = self.trainable(x);
        Ok(self.push(out, Op::Reshape(x), trainable))
    }

    /// `Σ_r weights[r] · −log softmax(logits[r])[targets[r]]` as a `1 × 1` node.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() || weights.len() != lv.rows() {
            return Err(Error::Shape(format!(
                "{} targets / {} weights for {} logit rows",
                targets.len(),
                weights.len(),
                lv.rows()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= lv.cols()) {
            return Err(Error::Shape(format!(
                "target class {bad} out of range for {} classes",
                lv.cols()
            )));
        }
        let probs = softmax_rows(lv);
        let mut loss = 0.0;
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w != 0.0 {
                loss += w * -log_softmax_at(lv.row(r), t);
            }
        }
        let trainable = self.trainable(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            trainable,
        ))
    }

    /// Accumulate d`loss`/dθ for every parameter reachable from `loss`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward from non-scalar {:?}",
                self.value(loss).shape()
            )));
        }
        let mut node_grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        node_grads.resize_with(loss.0 + 1, || None);
        node_grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = node_grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].trainable {
                continue;
            }
            match &self.nodes[idx].op {
                Op::Leaf | Op::Detach => {}
                Op::Param(id) => {
                    grads.slot(*id, g.shape()).add_assign(&g);
                }
                Op::Gather { table, ids } => {
                    let width = g.cols();
                    if let Op::Param(id) = self.nodes[table.0].op {
                        let slot = grads.slot(id, self.value(*table).shape());
                        scatter_rows(slot, ids, &g, width);
                    } else if self.trainable(*table) {
                        let (rows, cols) = self.value(*table).shape();
                        let mut dt = Tensor::zeros(rows, cols);
                        scatter_rows(&mut dt, ids, &g, width);
                        self.accumulate(&mut node_grads, grads, *table, dt);
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.trainable(*a) {
                        let mut da = Tensor::zeros(m, k);
                        gemm(m, n, k, g.data(), false, bv.data(), true, da.data_mut(), false);
                        self.accumulate(&mut node_grads, grads, *a, da);
                    }
                    if self.trainable(*b) {
                        let mut db = Tensor::zeros(k, n);
                        gemm(k, m, n, av.data(), true, g.data(), false, db.data_mut(), false);
                        self.accumulate(&mut node_grads, grads, *b, db);
                    }
                }
                Op::AddRow(x, b) => {
                    if self.trainable(*b) {
                        let mut db = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                        self.accumulate(&mut node_grads, grads, *b, db);
                    }
                    if self.trainable(*x) {
                        self.accumulate(&mut node_grads, grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.trainable(*a) && self.trainable(*b) {
                        self.accumulate(&mut node_grads, grads, *a, g.clone());
                        self.accumulate(&mut node_grads, grads, *b, g);
                    } else if self.trainable(*a) {
                        self.accumulate(&mut node_grads, grads, *a, g);
                    } else if self.trainable(*b) {
                        self.accumulate(&mut node_grads, grads, *b, g);
                    }
                }
                Op::Scale(x, factor) => {
                    let mut dx = g;
                    dx.scale(*factor);
                    self.accumulate(&mut node_grads, grads, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gamma);
                    let d = g.cols();
                    if self.trainable(*gamma) || self.trainable(*beta) {
                        let mut dgamma = Tensor::zeros(1, d);
                        let mut dbeta = Tensor::zeros(1, d);
                        for r in 0..g.rows() {
                            for c in 0..d {
                                dgamma.row_mut(0)[c] += g.get(r, c) * xhat.get(r, c);
                                dbeta.row_mut(0)[c] += g.get(r, c);
                            }
                        }
                        self.accumulate(&mut node_grads, grads, *gamma, dgamma);
                        self.accumulate(&mut node_grads, grads, *beta, dbeta);
                    }
                    if self.trainable(*x) {
                        let mut dx = Tensor::zeros(g.rows(), d);
                        let mut dxhat = vec![0.0; d];
                        for r in 0..g.rows() {
                            let mut sum = 0.0;
                            let mut sum_xhat = 0.0;
                            for c in 0..d {
                                dxhat[c] = g.get(r, c) * gv.get(0, c);
                                sum += dxhat[c];
                                sum_xhat += dxhat[c] * xhat.get(r, c);
                            }
                            let scale = rstd[r] / d as f64;
                            for c in 0..d {
                                dx.set(
                                    r,
                                    c,
                                    scale
                                        * (d as f64 * dxhat[c] - sum - xhat.get(r, c) * sum_xhat),
                                );
                            }
                        }
                        self.accumulate(&mut node_grads, grads, *x, dx);
                    }
                }
                Op::Gelu(x) => {
                    let mut dx = g;
                    for (d, v) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        *d *= gelu_grad(*v);
                    }
                    self.accumulate(&mut node_grads, grads, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    pattern,
                    probs,
                } => {
                    let (dq, dk, dv) = attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        *heads,
                        pattern,
                        probs,
                        &g,
                    );
                    if self.trainable(*q) {
                        self.accumulate(&mut node_grads, grads, *q, dq);
                    }
                    if self.trainable(*k) {
                        self.accumulate(&mut node_grads, grads, *k, dk);
                    }
                    if self.trainable(*v) {
                        self.accumulate(&mut node_grads, grads, *v, dv);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        if self.trainable(p) {
                            let part = g.slice_rows(start, start + rows);
                            self.accumulate(&mut node_grads, grads, p, part);
                        }
                        start += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut dx = Tensor::zeros(rows, cols);
                    dx.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    self.accumulate(&mut node_grads, grads, *x, dx);
                }
                Op::Reshape(x) => {
                    let (rows, cols) = self.value(*x).shape();
                    let dx = g.reshape(rows, cols)?;
                    self.accumulate(&mut node_grads, grads, *x, dx);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let upstream = g.get(0, 0);
                    let mut dl = probs.clone();
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let row = dl.row_mut(r);
                        row[t] -= 1.0;
                        let f = upstream * w;
                        row.iter_mut().for_each(|v| *v *= f);
                    }
                    self.accumulate(&mut node_grads, grads, *logits, dl);
                }
            }
        }
        Ok(())
    }

    fn accumulate(
        &self,
        node_grads: &mut [Option<Tensor>],
        grads: &mut Gradients,
        target: Var,
        g: Tensor,
    ) {
        match self.nodes[target.0].op {
            Op::Param(id) => grads.slot(id, g.shape()).add_assign(&g),
            Op::Leaf | Op::Detach => {}
            _ => match &mut node_grads[target.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            },
        }
    }
}

fn scatter_rows(dst: &mut Tensor, ids: &[usize], g: &Tensor, width: usize) {
    for (r, &id) in ids.iter().enumerate() {
        let src = &g.data()[r * width..(r + 1) * width];
        for (d, s) in dst.row_mut(id).iter_mut().zip(src) {
            *d += s;
        }
    }
}

fn attention_backward(
    qv: &Tensor,
    kv: &Tensor,
    vv: &Tensor,
    heads: usize,
    pattern: &AttentionPattern,
    probs: &[f64],
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let d = qv.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Tensor::zeros(qv.rows(), d);
    let mut dk = Tensor::zeros(kv.rows(), d);
    let mut dv = Tensor::zeros(vv.rows(), d);
    let mut dp = Vec::new();
    for r in 0..qv.rows() {
        let keys = pattern.row(r);
        if keys.is_empty() {
            continue;
        }
        let base = pattern.offsets[r] * heads;
        for h in 0..heads {
            let lo = h * dh;
            let p = &probs[base + h * keys.len()..base + (h + 1) * keys.len()];
            let go = &g.row(r)[lo..lo + dh];
            dp.clear();
            for (&key, &pe) in keys.iter().zip(p) {
                dp.push(dot(go, &vv.row(key)[lo..lo + dh]));
                for (d, o) in dv.row_mut(key)[lo..lo + dh].iter_mut().zip(go) {
                    *d += pe * o;
                }
            }
            let weighted: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for ((&key, &pe), &dpe) in keys.iter().zip(p).zip(&dp) {
                let ds = pe * (dpe - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq.row_mut(r)[lo + c] += ds * kv.get(key, lo + c);
                }
                let qrow = &qv.row(r)[lo..lo + dh];
                for (d, qe) in dk.row_mut(key)[lo..lo + dh].iter_mut().zip(qrow) {
                    *d += ds * qe;
                }
            }
        }
    }
    (dq, dk, dv)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[t] - lse
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}
