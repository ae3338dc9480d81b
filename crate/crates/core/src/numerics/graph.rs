//! Reverse-mode tape over coarse tensor operations.
//!
//! Every operation records its inputs plus whatever forward intermediates its
//! hand-derived backward needs. `backward` walks the tape in reverse once.

use std::collections::HashMap;

use crate::error::{RanError, Result};
use crate::numerics::gemm::{gemm, View, ViewMut};
use crate::numerics::kernels::{max_pool_time, mean_pool_time, moments, softmax_in_place};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation family, used for fault injection in gradient-check tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    AddBias,
    Add,
    Scale,
    LayerNorm,
    StandardNorm,
    Rotary,
    Attention,
    ConcatRows,
    SliceRows,
    Embedding,
    MaxPool,
    MeanPool,
    MaskRows,
    CrossEntropy,
    Bce,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: T,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    StandardNorm {
        x: Var,
        keep: Vec<bool>,
        rstd: Vec<T>,
    },
    Rotary {
        x: Var,
        head_dim: usize,
        cos: Vec<T>,
        sin: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: T,
        probs: Vec<T>,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanPool {
        x: Var,
        valid: Vec<bool>,
    },
    MaskRows {
        x: Var,
        keep: Vec<bool>,
    },
    CrossEntropy {
        logits: Var,
        rows: Vec<(usize, usize)>,
        probs: Vec<T>,
    },
    Bce {
        logits: Var,
        targets: Vec<T>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf | Op::Param(_) => return None,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Add { .. } => OpKind::Add,
            Op::Scale { .. } => OpKind::Scale,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::StandardNorm { .. } => OpKind::StandardNorm,
            Op::Rotary { .. } => OpKind::Rotary,
            Op::Attention { .. } => OpKind::Attention,
            Op::ConcatRows { .. } => OpKind::ConcatRows,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::MaxPool { .. } => OpKind::MaxPool,
            Op::MeanPool { .. } => OpKind::MeanPool,
            Op::MaskRows { .. } => OpKind::MaskRows,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Bce { .. } => OpKind::Bce,
        })
    }
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
}

/// A recorded forward computation against a borrowed parameter store.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    recording: bool,
    fault: Option<OpKind>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.0].as_ref()
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    pub fn into_params(self) -> Vec<Option<Tensor<T>>> {
        self.params
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph that records everything needed for `backward`.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            recording: true,
            fault: None,
        }
    }

    /// Forward-only graph; intermediates needed for backward are not kept.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Graph {
            recording: false,
            ..Self::new(params)
        }
    }

    /// Flip the sign of every gradient flowing out of operations of `kind`.
    /// Only useful for demonstrating that gradient checks catch broken
    /// backward passes.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Elements held by all node values, a proxy for activation memory.
    pub fn stored_elements(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| {
                let cache = match &n.op {
                    Op::LayerNorm { xhat, rstd, .. } => xhat.len() + rstd.len(),
                    Op::Attention { probs, .. } => probs.len(),
                    Op::CrossEntropy { probs, .. } => probs.len(),
                    _ => 0,
                };
                n.value.as_ref().map_or(0, Tensor::len) + cache
            })
            .sum()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn op_view(&self, v: Var, transposed: bool) -> View<'_, T> {
        let view = View::of(self.value(v));
        if transposed {
            view.t()
        } else {
            view
        }
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul_ex(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let av = self.op_view(a, ta);
        let bv = self.op_view(b, tb);
        if av.cols != bv.rows {
            return Err(RanError::dim(format!(
                "matmul: {}x{} times {}x{}",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        }
        let mut out = Tensor::zeros(&[av.rows, bv.cols]);
        gemm(T::one(), av, bv, T::zero(), ViewMut::of(&mut out));
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, true)
    }

    /// Adds the vector `b` (any shape with `cols()` elements) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let bias = self.value(b);
        let xv = self.value(x);
        if bias.len() != xv.cols() {
            return Err(RanError::dim("add_bias: bias length"));
        }
        let mut out = xv.clone();
        let d = out.cols();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &bb) in row.iter_mut().zip(bias.data()) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddBias { x, b }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() || av.cols() != bv.cols() {
            return Err(RanError::dim("add: shape mismatch"));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale { x, s })
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != d || b.len() != d {
            return Err(RanError::dim("layer_norm: parameter length"));
        }
        let mut out = xv.clone();
        let mut xhat = if self.recording { Vec::with_capacity(out.len()) } else { Vec::new() };
        let mut rstds = Vec::with_capacity(out.rows());
        for row in out.data_mut().chunks_mut(d) {
            let (mean, rstd) = moments(row, eps);
            rstds.push(rstd);
            for (j, v) in row.iter_mut().enumerate() {
                let h = (*v - mean) * rstd;
                if self.recording {
                    xhat.push(h);
                }
                *v = g.data()[j] * h + b.data()[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd: rstds,
            },
        ))
    }

    /// Per-row `(x - mean) / sqrt(var + eps)`; rows with `keep[r] == false`
    /// are emitted as zeros and receive no gradient.
    pub fn standard_norm(&mut self, x: Var, keep: Option<&[bool]>, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let rows = xv.rows();
        let keep = match keep {
            Some(k) if k.len() != rows => return Err(RanError::dim("standard_norm: mask length")),
            Some(k) => k.to_vec(),
            None => vec![true; rows],
        };
        let d = xv.cols();
        let mut out = xv.clone();
        let mut rstds = vec![T::zero(); rows];
        for (r, row) in out.data_mut().chunks_mut(d).enumerate() {
            if !keep[r] {
                row.iter_mut().for_each(|v| *v = T::zero());
                continue;
            }
            let (mean, rstd) = moments(row, eps);
            rstds[r] = rstd;
            row.iter_mut().for_each(|v| *v = (*v - mean) * rstd);
        }
        Ok(self.push(out, Op::StandardNorm { x, keep, rstd: rstds }))
    }

    /// Rotates consecutive feature pairs inside every head. `cos`/`sin` hold
    /// `rows * head_dim / 2` entries, row-major over (row, pair).
    pub fn rotary(&mut self, x: Var, head_dim: usize, cos: Vec<T>, sin: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = (xv.rows(), xv.cols());
        if head_dim % 2 != 0 || d % head_dim != 0 {
            return Err(RanError::config("rotary: head dim must be even and divide the width"));
        }
        let half = head_dim / 2;
        if cos.len() != rows * half || sin.len() != rows * half {
            return Err(RanError::dim("rotary: angle table size"));
        }
        let mut out = xv.clone();
        for r in 0..rows {
            let row = out.row_mut(r);
            for head in row.chunks_mut(head_dim) {
                for p in 0..half {
                    let (c, s) = (cos[r * half + p], sin[r * half + p]);
                    let (x0, x1) = (head[2 * p], head[2 * p + 1]);
                    head[2 * p] = x0 * c - x1 * s;
                    head[2 * p + 1] = x0 * s + x1 * c;
                }
            }
        }
        Ok(self.push(out, Op::Rotary { x, head_dim, cos, sin }))
    }

    /// Multi-head scaled dot-product attention with an additive `n x m` mask.
    /// Head `j` uses feature columns `j*dk..(j+1)*dk` of `q`, `k` and `v`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: &Tensor<T>, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, m, d) = (qv.rows(), kv.rows(), qv.cols());
        if kv.cols() != d || vv.cols() != d || vv.rows() != m {
            return Err(RanError::dim("attention: q/k/v shapes disagree"));
        }
        if heads == 0 || d % heads != 0 {
            return Err(RanError::config(format!("attention: {heads} heads do not divide width {d}")));
        }
        if mask.rows() != n || mask.cols() != m {
            return Err(RanError::dim(format!(
                "attention: mask is {}x{}, expected {n}x{m}",
                mask.rows(),
                mask.cols()
            )));
        }
        for r in 0..n {
            if !mask.row(r).iter().any(|x| x.is_finite()) {
                return Err(RanError::Mask(format!("query row {r} has no visible key")));
            }
        }
        let dk = d / heads;
        let scale = T::one() / T::of_usize(dk).sqrt();
        let mut out = Tensor::zeros(&[n, d]);
        let mut probs = vec![T::zero(); if self.recording { heads * n * m } else { n * m }];
        for j in 0..heads {
            let buf = if self.recording {
                &mut probs[j * n * m..(j + 1) * n * m]
            } else {
                &mut probs[..]
            };
            gemm(
                scale,
                View::of(qv).col_block(j * dk, dk),
                View::of(kv).col_block(j * dk, dk).t(),
                T::zero(),
                ViewMut::raw(buf, n, m),
            );
            for (row, mrow) in buf.chunks_mut(m).zip(mask.data().chunks(m)) {
                for (s, &mk) in row.iter_mut().zip(mrow) {
                    *s += mk;
                }
                softmax_in_place(row)?;
            }
            gemm(
                T::one(),
                View::raw(buf, n, m),
                View::of(vv).col_block(j * dk, dk),
                T::zero(),
                ViewMut::of(&mut out).col_block(j * dk, dk),
            );
        }
        if !self.recording {
            probs = Vec::new();
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                probs,
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&tensors)?;
        Ok(self.push(out, Op::ConcatRows { parts: parts.to_vec() }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if len == 0 || start + len > xv.rows() {
            return Err(RanError::dim(format!(
                "slice_rows {start}..{} of {} rows",
                start + len,
                xv.rows()
            )));
        }
        let out = xv.slice_rows(start, len);
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (vocab, d) = (tv.rows(), tv.cols());
        if ids.is_empty() {
            return Err(RanError::dim("embedding of an empty id list"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(RanError::dim(format!("token id {id} out of vocabulary {vocab}")));
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::matrix(ids.len(), d, data)?;
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }))
    }

    pub fn max_pool(&mut self, x: Var, valid: &[bool]) -> Result<Var> {
        let (out, argmax) = max_pool_time(self.value(x), valid)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }))
    }

    pub fn mean_pool(&mut self, x: Var, valid: &[bool]) -> Result<Var> {
        let out = mean_pool_time(self.value(x), valid)?;
        Ok(self.push(out, Op::MeanPool { x, valid: valid.to_vec() }))
    }

    /// Zeroes rows where `keep[r]` is false.
    pub fn mask_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if keep.len() != xv.rows() {
            return Err(RanError::dim("mask_rows: mask length"));
        }
        let mut out = xv.clone();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                out.row_mut(r).iter_mut().for_each(|v| *v = T::zero());
            }
        }
        Ok(self.push(out, Op::MaskRows { x, keep: keep.to_vec() }))
    }

    /// Mean negative log-likelihood over rows that carry a target. Rows with
    /// `None` contribute nothing. Produces a `1 x 1` node (zero when no row has
    /// a target).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        let classes = lv.cols();
        if targets.len() != lv.rows() {
            return Err(RanError::dim("cross_entropy: one target slot per row"));
        }
        let mut rows = Vec::new();
        let mut probs = Vec::new();
        let mut total = T::zero();
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= classes {
                return Err(RanError::dim(format!("target {t} out of {classes} classes")));
            }
            let mut p = lv.row(r).to_vec();
            let z_t = p[t];
            let max = p.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + p.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            total += lse - z_t;
            softmax_in_place(&mut p)?;
            rows.push((r, t));
            if self.recording {
                probs.extend(p);
            }
        }
        let loss = if rows.is_empty() {
            T::zero()
        } else {
            total / T::of_usize(rows.len())
        };
        if !loss.is_finite() {
            return Err(RanError::Numeric("cross entropy is not finite".into()));
        }
        Ok(self.push(Tensor::full(&[1, 1], loss), Op::CrossEntropy { logits, rows, probs }))
    }

    /// Mean binary cross-entropy with logits over every entry.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.len() {
            return Err(RanError::dim("bce: one target per logit"));
        }
        let total: T = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        let loss = total / T::of_usize(targets.len());
        Ok(self.push(
            Tensor::full(&[1, 1], loss),
            Op::Bce {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(RanError::State("backward on a graph built without recording".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(RanError::State("backward before forward: unknown loss node".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(RanError::State("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        let mut out = Gradients {
            params: vec![None; self.params.len()],
            leaves: HashMap::new(),
        };
        for i in (0..=loss.0).rev() {
            let Some(mut g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(i, g);
                    continue;
                }
                Op::Param(id) => {
                    accumulate(&mut out.params[id.0], g);
                    continue;
                }
                _ => {}
            }
            if self.fault.is_some() && self.fault == node.op.kind() {
                g.scale_assign(-T::one());
            }
            self.backward_node(node, &g, &mut grads)?;
        }
        Ok(out)
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let y = node.value.as_ref().expect("op nodes own their value");
        match &node.op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul { a, b, ta, tb } => {
                let av = self.op_view(*a, *ta);
                let bv = self.op_view(*b, *tb);
                let gv = View::of(g);
                let ashape = self.value(*a).shape().to_vec();
                let bshape = self.value(*b).shape().to_vec();
                let mut da = Tensor::zeros(&ashape);
                let mut db = Tensor::zeros(&bshape);
                // dA' = dC B'^T and dB' = A'^T dC, written through the
                // transposed views when the operand itself was transposed.
                let da_view = if *ta { ViewMut::of(&mut da).t() } else { ViewMut::of(&mut da) };
                gemm(T::one(), gv, bv.t(), T::zero(), da_view);
                let db_view = if *tb { ViewMut::of(&mut db).t() } else { ViewMut::of(&mut db) };
                gemm(T::one(), av.t(), gv, T::zero(), db_view);
                accumulate(&mut grads[a.0], da);
                accumulate(&mut grads[b.0], db);
            }
            Op::AddBias { x, b } => {
                let bshape = self.value(*b).shape().to_vec();
                let d = g.cols();
                let mut db = vec![T::zero(); d];
                for row in g.data().chunks(d) {
                    for (a, &v) in db.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                accumulate(&mut grads[b.0], Tensor::new(bshape, db)?);
                accumulate(&mut grads[x.0], g.clone());
            }
            Op::Add { a, b } => {
                accumulate(&mut grads[a.0], g.clone().reshape(self.value(*a).shape().to_vec())?);
                accumulate(&mut grads[b.0], g.clone().reshape(self.value(*b).shape().to_vec())?);
            }
            Op::Scale { x, s } => {
                accumulate(&mut grads[x.0], g.map(|v| v * *s));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = g.cols();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut dx = Tensor::zeros(g.shape());
                let inv_d = T::one() / T::of_usize(d);
                for r in 0..g.rows() {
                    let gr = g.row(r);
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        let dh = gr[j] * gam[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh *= inv_d;
                    mean_dh_h *= inv_d;
                    let dxr = dx.row_mut(r);
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        dxr[j] = rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                accumulate(&mut grads[x.0], dx);
                accumulate(&mut grads[gamma.0], Tensor::new(self.value(*gamma).shape().to_vec(), dgamma)?);
                accumulate(&mut grads[beta.0], Tensor::new(self.value(*beta).shape().to_vec(), dbeta)?);
            }
            Op::StandardNorm { x, keep, rstd } => {
                let d = g.cols();
                let inv_d = T::one() / T::of_usize(d);
                let mut dx = Tensor::zeros(g.shape());
                for r in (0..g.rows()).filter(|&r| keep[r]) {
                    let (gr, hr) = (g.row(r), y.row(r));
                    let mean_g = gr.iter().copied().sum::<T>() * inv_d;
                    let mean_gh = gr.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                    let dxr = dx.row_mut(r);
                    for j in 0..d {
                        dxr[j] = rstd[r] * (gr[j] - mean_g - hr[j] * mean_gh);
                    }
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::Rotary { x, head_dim, cos, sin } => {
                let half = head_dim / 2;
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    let row = dx.row_mut(r);
                    for head in row.chunks_mut(*head_dim) {
                        for p in 0..half {
                            let (c, s) = (cos[r * half + p], sin[r * half + p]);
                            let (g0, g1) = (head[2 * p], head[2 * p + 1]);
                            head[2 * p] = g0 * c + g1 * s;
                            head[2 * p + 1] = g1 * c - g0 * s;
                        }
                    }
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (n, m, d) = (qv.rows(), kv.rows(), qv.cols());
                let dk = d / heads;
                let mut dq = Tensor::zeros(&[n, d]);
                let mut dkt = Tensor::zeros(&[m, d]);
                let mut dv = Tensor::zeros(&[m, d]);
                let mut ds = vec![T::zero(); n * m];
                for j in 0..*heads {
                    let p = &probs[j * n * m..(j + 1) * n * m];
                    let go = View::of(g).col_block(j * dk, dk);
                    // dP = dO V^T
                    gemm(
                        T::one(),
                        go,
                        View::of(vv).col_block(j * dk, dk).t(),
                        T::zero(),
                        ViewMut::raw(&mut ds, n, m),
                    );
                    // dV = P^T dO
                    gemm(
                        T::one(),
                        View::raw(p, n, m).t(),
                        go,
                        T::zero(),
                        ViewMut::of(&mut dv).col_block(j * dk, dk),
                    );
                    for (dsr, pr) in ds.chunks_mut(m).zip(p.chunks(m)) {
                        let dot: T = dsr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                        for (a, &b) in dsr.iter_mut().zip(pr) {
                            *a = b * (*a - dot);
                        }
                    }
                    gemm(
                        *scale,
                        View::raw(&ds, n, m),
                        View::of(kv).col_block(j * dk, dk),
                        T::zero(),
                        ViewMut::of(&mut dq).col_block(j * dk, dk),
                    );
                    gemm(
                        *scale,
                        View::raw(&ds, n, m).t(),
                        View::of(qv).col_block(j * dk, dk),
                        T::zero(),
                        ViewMut::of(&mut dkt).col_block(j * dk, dk),
                    );
                }
                accumulate(&mut grads[q.0], dq);
                accumulate(&mut grads[k.0], dkt);
                accumulate(&mut grads[v.0], dv);
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    let shape = self.value(*p).shape().to_vec();
                    let piece = g.slice_rows(offset, rows).reshape(shape)?;
                    accumulate(&mut grads[p.0], piece);
                    offset += rows;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape());
                let c = xv.cols();
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(&mut grads[x.0], dx);
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let mut dt = Tensor::zeros(tv.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (a, &b) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *a += b;
                    }
                }
                accumulate(&mut grads[table.0], dt);
            }
            Op::MaxPool { x, argmax } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape());
                for (j, &r) in argmax.iter().enumerate() {
                    let cur = dx.get(r, j);
                    dx.set(r, j, cur + g.data()[j]);
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::MeanPool { x, valid } => {
                let xv = self.value(*x);
                let count = T::of_usize(valid.iter().filter(|&&v| v).count());
                let mut dx = Tensor::zeros(xv.shape());
                for r in (0..xv.rows()).filter(|&r| valid[r]) {
                    for (a, &b) in dx.row_mut(r).iter_mut().zip(g.data()) {
                        *a = b / count;
                    }
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::MaskRows { x, keep } => {
                let mut dx = g.clone();
                for (r, &k) in keep.iter().enumerate() {
                    if !k {
                        dx.row_mut(r).iter_mut().for_each(|v| *v = T::zero());
                    }
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::CrossEntropy { logits, rows, probs } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let mut dl = Tensor::zeros(lv.shape());
                if !rows.is_empty() {
                    let w = g.data()[0] / T::of_usize(rows.len());
                    for (i, &(r, t)) in rows.iter().enumerate() {
                        let dr = dl.row_mut(r);
                        for (j, a) in dr.iter_mut().enumerate() {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            *a = w * (probs[i * c + j] - onehot);
                        }
                    }
                }
                accumulate(&mut grads[logits.0], dl);
            }
            Op::Bce { logits, targets } => {
                let lv = self.value(*logits);
                let w = g.data()[0] / T::of_usize(targets.len());
                let data = lv
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| w * (T::one() / (T::one() + (-z).exp()) - t))
                    .collect();
                accumulate(&mut grads[logits.0], Tensor::new(lv.shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}
