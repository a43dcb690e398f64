//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! The tape is define-by-run and rebuilt per forward pass: operations taking
//! at least one gradient-tracked input are recorded as nodes in topological
//! order, everything else is computed as a plain value and never stored.
//! `backward` walks the nodes in reverse, accumulating one gradient per
//! tracked leaf. The same forward code therefore serves both training
//! (tracked weights) and evaluation (plain weights, no graph retained).

use crate::tensor::{gelu_grad_scalar, row_mean_var, Tensor, TensorError};
use std::sync::atomic::{AtomicU64, Ordering};

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Handle tying a tensor to the node that produced it on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRef {
    stamp: u64,
    index: usize,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Affine { x: usize, mul: f64 },
    AddBiasRow { x: usize, bias: usize },
    RowSoftmax { logits: usize, temperature: f64 },
    Gelu(usize),
    LayerNormRows { x: usize, gain: usize, bias: usize, eps: f64 },
    GatherRows { table: usize, ids: Vec<usize> },
    CrossEntropyRows { logits: usize, targets: Vec<Option<usize>> },
    SumRowNorms(usize),
    PotentialMeanRows(usize),
    TsallisMeanRows { probs: usize, q: f64 },
    AbsDev { x: usize, target: f64 },
    ClampMaxOne(usize),
    MulScalar { scalar: usize, tensor: usize },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

pub struct Tape {
    stamp: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            stamp: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a gradient-tracked leaf and returns a handle-carrying copy.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        let index = self.push(Op::Leaf, t.detached(), true);
        t.detached().with_node(NodeRef {
            stamp: self.stamp,
            index,
        })
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> usize {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    /// Index of `t` when it is a gradient-carrying node of this tape.
    fn tracked(&self, t: &Tensor) -> Option<usize> {
        match t.node() {
            Some(r) if r.stamp == self.stamp && self.nodes[r.index].requires_grad => Some(r.index),
            _ => None,
        }
    }

    /// Interns `t` as a parent: either its existing node or a fresh
    /// untracked constant leaf.
    fn intern(&mut self, t: &Tensor) -> usize {
        if let Some(r) = t.node() {
            if r.stamp == self.stamp {
                return r.index;
            }
        }
        self.push(Op::Leaf, t.detached(), false)
    }

    fn emit(&mut self, op: Op, value: Tensor) -> Tensor {
        let out = value.detached();
        let index = self.push(op, value, true);
        out.with_node(NodeRef {
            stamp: self.stamp,
            index,
        })
    }

    // ── recorded operations ─────────────────────────────────────────

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.matmul(b)?;
        if self.tracked(a).is_none() && self.tracked(b).is_none() {
            return Ok(value);
        }
        let (ai, bi) = (self.intern(a), self.intern(b));
        Ok(self.emit(Op::MatMul(ai, bi), value))
    }

    pub fn transpose(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.transpose();
        match self.tracked(a) {
            None => Ok(value),
            Some(ai) => Ok(self.emit(Op::Transpose(ai), value)),
        }
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.add(b)?;
        if self.tracked(a).is_none() && self.tracked(b).is_none() {
            return Ok(value);
        }
        let (ai, bi) = (self.intern(a), self.intern(b));
        Ok(self.emit(Op::Add(ai, bi), value))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.sub(b)?;
        if self.tracked(a).is_none() && self.tracked(b).is_none() {
            return Ok(value);
        }
        let (ai, bi) = (self.intern(a), self.intern(b));
        Ok(self.emit(Op::Sub(ai, bi), value))
    }

    pub fn scale(&mut self, a: &Tensor, k: f64) -> Result<Tensor, TensorError> {
        self.affine(a, k, 0.0)
    }

    pub fn affine(&mut self, a: &Tensor, mul: f64, add: f64) -> Result<Tensor, TensorError> {
        let value = a.affine(mul, add);
        match self.tracked(a) {
            None => Ok(value),
            Some(ai) => Ok(self.emit(Op::Affine { x: ai, mul }, value)),
        }
    }

    pub fn add_bias_row(&mut self, a: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.add_bias_row(bias)?;
        if self.tracked(a).is_none() && self.tracked(bias).is_none() {
            return Ok(value);
        }
        let (ai, bi) = (self.intern(a), self.intern(bias));
        Ok(self.emit(Op::AddBiasRow { x: ai, bias: bi }, value))
    }

    pub fn row_softmax(&mut self, logits: &Tensor, temperature: f64) -> Result<Tensor, TensorError> {
        let value = logits.row_softmax(temperature)?;
        match self.tracked(logits) {
            None => Ok(value),
            Some(li) => Ok(self.emit(
                Op::RowSoftmax {
                    logits: li,
                    temperature,
                },
                value,
            )),
        }
    }

    pub fn gelu(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.gelu();
        match self.tracked(a) {
            None => Ok(value),
            Some(ai) => Ok(self.emit(Op::Gelu(ai), value)),
        }
    }

    pub fn layer_norm_rows(
        &mut self,
        a: &Tensor,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor, TensorError> {
        let value = a.layer_norm_rows(gain, bias, eps)?;
        if self.tracked(a).is_none() && self.tracked(gain).is_none() && self.tracked(bias).is_none()
        {
            return Ok(value);
        }
        let (ai, gi, bi) = (self.intern(a), self.intern(gain), self.intern(bias));
        Ok(self.emit(
            Op::LayerNormRows {
                x: ai,
                gain: gi,
                bias: bi,
                eps,
            },
            value,
        ))
    }

    pub fn gather_rows(&mut self, table: &Tensor, ids: &[usize]) -> Result<Tensor, TensorError> {
        let value = table.gather_rows(ids)?;
        match self.tracked(table) {
            None => Ok(value),
            Some(ti) => Ok(self.emit(
                Op::GatherRows {
                    table: ti,
                    ids: ids.to_vec(),
                },
                value,
            )),
        }
    }

    /// Summed cross-entropy `sum_i (logsumexp(row_i) - row_i[target_i])`
    /// over rows with a target; rows with `None` are skipped.
    pub fn cross_entropy_rows(
        &mut self,
        logits: &Tensor,
        targets: &[Option<usize>],
    ) -> Result<Tensor, TensorError> {
        if targets.len() != logits.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy_rows",
                lhs: logits.shape(),
                rhs: (targets.len(), 1),
            });
        }
        let mut total = 0.0;
        for (i, tgt) in targets.iter().enumerate() {
            if let Some(t) = *tgt {
                if t >= logits.cols() {
                    return Err(TensorError::RowOutOfRange {
                        index: t,
                        rows: logits.cols(),
                    });
                }
                let row = logits.row(i);
                total += log_sum_exp(row) - row[t];
            }
        }
        let value = Tensor::scalar(total);
        match self.tracked(logits) {
            None => Ok(value),
            Some(li) => Ok(self.emit(
                Op::CrossEntropyRows {
                    logits: li,
                    targets: targets.to_vec(),
                },
                value,
            )),
        }
    }

    /// Sum of Euclidean row norms, `sum_i ||row_i||_2`.
    pub fn sum_row_norms(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        let total: f64 = (0..a.rows())
            .map(|i| a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum();
        let value = Tensor::scalar(total);
        match self.tracked(a) {
            None => Ok(value),
            Some(ai) => Ok(self.emit(Op::SumRowNorms(ai), value)),
        }
    }

    /// Mean over rows of `-ln(max_j p_ij)` for a row-stochastic input.
    pub fn potential_mean_rows(&mut self, probs: &Tensor) -> Result<Tensor, TensorError> {
        let rows = probs.rows();
        let mut total = 0.0;
        for i in 0..rows {
            let m = probs.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            total += -m.ln();
        }
        let value = Tensor::scalar(total / rows as f64);
        match self.tracked(probs) {
            None => Ok(value),
            Some(pi) => Ok(self.emit(Op::PotentialMeanRows(pi), value)),
        }
    }

    /// Mean over rows of the Tsallis entropy `(1 - sum_j p^q) / (q - 1)`.
    pub fn tsallis_mean_rows(&mut self, probs: &Tensor, q: f64) -> Result<Tensor, TensorError> {
        let rows = probs.rows();
        let mut total = 0.0;
        for i in 0..rows {
            // p^1.5 = p sqrt(p): the default index avoids powf entirely.
            let pow_sum: f64 = if q == 1.5 {
                probs.row(i).iter().map(|&p| p * p.sqrt()).sum()
            } else {
                probs.row(i).iter().map(|&p| p.powf(q)).sum()
            };
            total += (1.0 - pow_sum) / (q - 1.0);
        }
        let value = Tensor::scalar(total / rows as f64);
        match self.tracked(probs) {
            None => Ok(value),
            Some(pi) => Ok(self.emit(Op::TsallisMeanRows { probs: pi, q }, value)),
        }
    }

    /// Absolute deviation `|x - target|` of a scalar node.
    pub fn abs_dev(&mut self, x: &Tensor, target: f64) -> Result<Tensor, TensorError> {
        let value = Tensor::scalar((x.item()? - target).abs());
        match self.tracked(x) {
            None => Ok(value),
            Some(xi) => Ok(self.emit(Op::AbsDev { x: xi, target }, value)),
        }
    }

    /// Elementwise `min(x, 1)`.
    pub fn clamp_max_one(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let value = Tensor::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j).min(1.0));
        match self.tracked(x) {
            None => Ok(value),
            Some(xi) => Ok(self.emit(Op::ClampMaxOne(xi), value)),
        }
    }

    /// Scales a tensor by a 1x1 scalar node, keeping both differentiable.
    pub fn mul_scalar(&mut self, scalar: &Tensor, tensor: &Tensor) -> Result<Tensor, TensorError> {
        let s = scalar.item()?;
        let value = tensor.scale(s);
        if self.tracked(scalar).is_none() && self.tracked(tensor).is_none() {
            return Ok(value);
        }
        let (si, ti) = (self.intern(scalar), self.intern(tensor));
        Ok(self.emit(
            Op::MulScalar {
                scalar: si,
                tensor: ti,
            },
            value,
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Backpropagates from a scalar root, returning one accumulated
    /// gradient per tracked leaf (exact zeros for untouched leaves).
    pub fn backward(&self, root: &Tensor) -> Result<Gradients, TensorError> {
        let root_idx = match root.node() {
            Some(r) if r.stamp == self.stamp => r.index,
            _ => return Err(TensorError::NotOnTape),
        };
        if !root.is_scalar() {
            return Err(TensorError::NonScalarRoot {
                rows: root.rows(),
                cols: root.cols(),
            });
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root_idx] = Some(vec![1.0]);

        for i in (0..=root_idx).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
        }

        let mut by_node: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let data = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.rows() * node.value.cols()]);
                by_node[i] =
                    Some(Tensor::from_vec(node.value.rows(), node.value.cols(), data).map_err(
                        |_| TensorError::NonFinite {
                            op: "backward",
                        },
                    )?);
            }
        }
        Ok(Gradients {
            stamp: self.stamp,
            by_node,
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |idx: usize| &nodes[idx].value;
        let mut acc = |idx: usize, contribute: &mut dyn FnMut(&mut [f64])| {
            if !nodes[idx].requires_grad {
                return;
            }
            let size = nodes[idx].value.rows() * nodes[idx].value.cols();
            let slot = &mut grads[idx];
            let buf = slot.get_or_insert_with(|| vec![0.0; size]);
            contribute(buf);
        };

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                acc(*a, &mut |dst| {
                    // dA += G * B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            let grow = &g[i * n..(i + 1) * n];
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            for (gv, bvv) in grow.iter().zip(brow) {
                                s += gv * bvv;
                            }
                            dst[i * k + p] += s;
                        }
                    }
                });
                acc(*b, &mut |dst| {
                    // dB += A^T * G
                    for i in 0..m {
                        let arow = &av.data()[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for (p, &a_ip) in arow.iter().enumerate() {
                            let drow = &mut dst[p * n..(p + 1) * n];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += a_ip * gv;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (nodes[i].value.rows(), nodes[i].value.cols());
                acc(*a, &mut |dst| {
                    for ii in 0..r {
                        for jj in 0..c {
                            dst[jj * r + ii] += g[ii * c + jj];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                acc(*b, &mut |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                acc(*b, &mut |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            Op::Affine { x, mul } => {
                let mul = *mul;
                acc(*x, &mut |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += mul * gv;
                    }
                });
            }
            Op::AddBiasRow { x, bias } => {
                let (r, c) = (val(*x).rows(), val(*x).cols());
                acc(*x, &mut |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                acc(*bias, &mut |dst| {
                    for ii in 0..r {
                        for jj in 0..c {
                            dst[jj] += g[ii * c + jj];
                        }
                    }
                });
            }
            Op::RowSoftmax {
                logits,
                temperature,
            } => {
                let s = &nodes[i].value;
                let (r, c) = (s.rows(), s.cols());
                let inv_t = 1.0 / temperature;
                acc(*logits, &mut |dst| {
                    for ii in 0..r {
                        let srow = s.row(ii);
                        let grow = &g[ii * c..(ii + 1) * c];
                        let dot: f64 = srow.iter().zip(grow).map(|(sv, gv)| sv * gv).sum();
                        let drow = &mut dst[ii * c..(ii + 1) * c];
                        for j in 0..c {
                            drow[j] += srow[j] * (grow[j] - dot) * inv_t;
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let x = val(*a);
                acc(*a, &mut |dst| {
                    for ((d, gv), xv) in dst.iter_mut().zip(g).zip(x.data()) {
                        *d += gv * gelu_grad_scalar(*xv);
                    }
                });
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let xv = val(*x);
                let gv_ = val(*gain);
                let (r, c) = (xv.rows(), xv.cols());
                let eps = *eps;
                acc(*bias, &mut |dst| {
                    for ii in 0..r {
                        for jj in 0..c {
                            dst[jj] += g[ii * c + jj];
                        }
                    }
                });
                acc(*gain, &mut |dst| {
                    for ii in 0..r {
                        let row = xv.row(ii);
                        let (mean, var) = row_mean_var(row);
                        let inv_std = 1.0 / (var + eps).sqrt();
                        for jj in 0..c {
                            let xhat = (row[jj] - mean) * inv_std;
                            dst[jj] += g[ii * c + jj] * xhat;
                        }
                    }
                });
                acc(*x, &mut |dst| {
                    for ii in 0..r {
                        let row = xv.row(ii);
                        let (mean, var) = row_mean_var(row);
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let grow = &g[ii * c..(ii + 1) * c];
                        let mut mean_u = 0.0;
                        let mut mean_ux = 0.0;
                        for jj in 0..c {
                            let u = grow[jj] * gv_.data()[jj];
                            let xhat = (row[jj] - mean) * inv_std;
                            mean_u += u;
                            mean_ux += u * xhat;
                        }
                        mean_u /= c as f64;
                        mean_ux /= c as f64;
                        let drow = &mut dst[ii * c..(ii + 1) * c];
                        for jj in 0..c {
                            let u = grow[jj] * gv_.data()[jj];
                            let xhat = (row[jj] - mean) * inv_std;
                            drow[jj] += (u - mean_u - xhat * mean_ux) * inv_std;
                        }
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let c = val(*table).cols();
                acc(*table, &mut |dst| {
                    for (row_out, &id) in ids.iter().enumerate() {
                        let grow = &g[row_out * c..(row_out + 1) * c];
                        let drow = &mut dst[id * c..(id + 1) * c];
                        for (d, gvv) in drow.iter_mut().zip(grow) {
                            *d += gvv;
                        }
                    }
                });
            }
            Op::CrossEntropyRows { logits, targets } => {
                let lv = val(*logits);
                let (_, c) = (lv.rows(), lv.cols());
                let g0 = g[0];
                acc(*logits, &mut |dst| {
                    for (ii, tgt) in targets.iter().enumerate() {
                        if let Some(t) = *tgt {
                            let row = lv.row(ii);
                            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                            let drow = &mut dst[ii * c..(ii + 1) * c];
                            for jj in 0..c {
                                let p = (row[jj] - max).exp() / denom;
                                drow[jj] += g0 * p;
                            }
                            drow[t] -= g0;
                        }
                    }
                });
            }
            Op::SumRowNorms(a) => {
                let xv = val(*a);
                let (r, c) = (xv.rows(), xv.cols());
                let g0 = g[0];
                acc(*a, &mut |dst| {
                    for ii in 0..r {
                        let row = xv.row(ii);
                        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm > 0.0 {
                            let drow = &mut dst[ii * c..(ii + 1) * c];
                            for (d, &xvv) in drow.iter_mut().zip(row) {
                                *d += g0 * xvv / norm;
                            }
                        }
                    }
                });
            }
            Op::PotentialMeanRows(p) => {
                let pv = val(*p);
                let (r, c) = (pv.rows(), pv.cols());
                let g0 = g[0] / r as f64;
                acc(*p, &mut |dst| {
                    for ii in 0..r {
                        let row = pv.row(ii);
                        let mut arg = 0;
                        for jj in 1..c {
                            if row[jj] > row[arg] {
                                arg = jj;
                            }
                        }
                        dst[ii * c + arg] -= g0 / row[arg];
                    }
                });
            }
            Op::TsallisMeanRows { probs, q } => {
                let pv = val(*probs);
                let (r, c) = (pv.rows(), pv.cols());
                let q = *q;
                let g0 = g[0] / r as f64;
                acc(*probs, &mut |dst| {
                    let scale = g0 * q / (q - 1.0);
                    for ii in 0..r {
                        let row = pv.row(ii);
                        let drow = &mut dst[ii * c..(ii + 1) * c];
                        if q == 1.5 {
                            for (d, &p) in drow.iter_mut().zip(row) {
                                *d -= scale * p.sqrt();
                            }
                        } else {
                            for (d, &p) in drow.iter_mut().zip(row) {
                                *d -= scale * p.powf(q - 1.0);
                            }
                        }
                    }
                });
            }
            Op::AbsDev { x, target } => {
                let xv = val(*x).data()[0];
                let sign = if xv > *target {
                    1.0
                } else if xv < *target {
                    -1.0
                } else {
                    0.0
                };
                let g0 = g[0];
                acc(*x, &mut |dst| {
                    dst[0] += g0 * sign;
                });
            }
            Op::ClampMaxOne(x) => {
                let xv = val(*x);
                acc(*x, &mut |dst| {
                    for ((d, gv), &v) in dst.iter_mut().zip(g).zip(xv.data()) {
                        if v < 1.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::MulScalar { scalar, tensor } => {
                let s = val(*scalar).data()[0];
                let tv = val(*tensor);
                acc(*tensor, &mut |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += s * gv;
                    }
                });
                acc(*scalar, &mut |dst| {
                    let mut total = 0.0;
                    for (gv, tvv) in g.iter().zip(tv.data()) {
                        total += gv * tvv;
                    }
                    dst[0] += total;
                });
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`], keyed by leaf handle.
pub struct Gradients {
    stamp: u64,
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to a tracked leaf.
    pub fn get(&self, leaf: &Tensor) -> Option<&Tensor> {
        match leaf.node() {
            Some(r) if r.stamp == self.stamp => self.by_node.get(r.index)?.as_ref(),
            _ => None,
        }
    }

    pub fn expect(&self, leaf: &Tensor) -> Result<&Tensor, TensorError> {
        self.get(leaf).ok_or(TensorError::NotOnTape)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Central-difference gradient estimate `(f(x + h e) - f(x - h e)) / 2h`
/// per coordinate. The verification oracle for every backward rule.
pub fn finite_diff_gradient<E>(
    mut f: impl FnMut(&Tensor) -> Result<f64, E>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor, E> {
    let mut grad = vec![0.0; x.rows() * x.cols()];
    let base = x.data().to_vec();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let xp = Tensor::from_vec(x.rows(), x.cols(), plus).expect("perturbed point is finite");
        let xm = Tensor::from_vec(x.rows(), x.cols(), minus).expect("perturbed point is finite");
        grad[i] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Ok(Tensor::from_vec(x.rows(), x.cols(), grad).expect("finite gradient"))
}

/// Scale-robust relative error `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(1e-8))
}

/// Largest relative error between two same-shape tensors.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}
