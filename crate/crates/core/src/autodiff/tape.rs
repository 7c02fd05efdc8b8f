//! Dynamic tape for reverse-mode differentiation.
//!
//! Ops are recorded eagerly: each call computes its output immediately and
//! appends a node, so the node list is always in topological order.
//! `backward` walks it once in reverse, accumulating gradients additively
//! (shared subexpressions therefore Just Work).
//!
//! The op set is deliberately small: dense linear layers, the activations
//! the field models use, same-shape elementwise arithmetic, and a few
//! structured ops for ray compositing (row scaling, segment sums, the
//! alpha-to-weights transform). No general broadcasting.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// y = x W^T + b, x:(B,I), w:(O,I), b:(O)
    Linear { x: ValueId, w: ValueId, b: ValueId },
    Relu(ValueId),
    Sigmoid(ValueId),
    Softplus(ValueId),
    Exp(ValueId),
    Log(ValueId),
    Square(ValueId),
    /// y = a*x + c
    Affine { x: ValueId, a: f64 },
    MaxConst { x: ValueId, c: f64 },
    MinConst { x: ValueId, c: f64 },
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Div(ValueId, ValueId),
    /// Elementwise product with a constant tensor.
    MulConstT { x: ValueId, k: Tensor },
    AddConstT { x: ValueId },
    /// Column-wise concat of 2-D tensors with equal row counts.
    Concat { parts: Vec<ValueId> },
    GatherRows { table: ValueId, idx: Vec<usize> },
    /// Scale row m of x by w[m]; x:(M,C), w:(M) or (M,1).
    RowScale { x: ValueId, w: ValueId },
    /// (M,1) -> (M,c) by repetition.
    RepeatCols { x: ValueId, c: usize },
    /// Sum consecutive groups of `group` rows.
    SegmentSum { x: ValueId, group: usize },
    /// (B,N) -> (B): per-row sum.
    SumAxis1 { x: ValueId },
    SumAll { x: ValueId },
    MeanAll { x: ValueId },
    Reshape { x: ValueId },
    SliceRows { x: ValueId, start: usize, len: usize },
    /// Per-row compositing weights w_i = alpha_i * prod_{k<i}(1 - alpha_k).
    RenderWeights { alpha: ValueId },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward pass: one gradient slot per node, filled only for
/// nodes on a differentiable path to the loss.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: gradients will be produced for it.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push_raw(Op::Leaf, value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push_raw(Op::Leaf, value, false)
    }

    fn push_raw(&mut self, op: Op, value: Tensor, needs_grad: bool) -> ValueId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<ValueId> {
        value.assert_finite("op output")?;
        let needs_grad = self.op_inputs(&op).iter().any(|&i| self.nodes[i.0].needs_grad);
        Ok(self.push_raw(op, value, needs_grad))
    }

    fn op_inputs(&self, op: &Op) -> Vec<ValueId> {
        match op {
            Op::Leaf => vec![],
            Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Softplus(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Square(x) => vec![*x],
            Op::Affine { x, .. }
            | Op::MaxConst { x, .. }
            | Op::MinConst { x, .. }
            | Op::MulConstT { x, .. }
            | Op::AddConstT { x, .. }
            | Op::GatherRows { table: x, .. }
            | Op::RepeatCols { x, .. }
            | Op::SegmentSum { x, .. }
            | Op::SumAxis1 { x }
            | Op::SumAll { x }
            | Op::MeanAll { x }
            | Op::Reshape { x }
            | Op::SliceRows { x, .. } => vec![*x],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::Concat { parts } => parts.clone(),
            Op::RowScale { x, w } => vec![*x, *w],
            Op::RenderWeights { alpha } => vec![*alpha],
        }
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn linear(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        let (bsz, i) = (xt.rows(), xt.cols());
        let (o, wi) = (wt.rows(), wt.cols());
        if wi != i || bt.numel() != o {
            return Err(Error::Dim(format!(
                "linear: x {:?} w {:?} b {:?}",
                xt.shape(),
                wt.shape(),
                bt.shape()
            )));
        }
        let mut out = vec![0.0; bsz * o];
        let (xd, wd, bd) = (xt.data(), wt.data(), bt.data());
        for r in 0..bsz {
            let xrow = &xd[r * i..(r + 1) * i];
            let orow = &mut out[r * o..(r + 1) * o];
            orow.copy_from_slice(bd);
            // i-k-j style accumulation keeps W rows streaming through cache.
            for (oc, wrow) in wrow_iter(wd, o, i).enumerate() {
                let mut acc = 0.0;
                for k in 0..i {
                    acc += xrow[k] * wrow[k];
                }
                orow[oc] += acc;
            }
        }
        let v = Tensor::new(vec![bsz, o], out)?;
        self.push(Op::Linear { x, w, b }, v)
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { 0.0 });
        self.push(Op::Relu(x), v)
    }

    pub fn sigmoid(&mut self, x: ValueId) -> Result<ValueId> {
        let v = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), v)
    }

    pub fn softplus(&mut self, x: ValueId) -> Result<ValueId> {
        let v = self.value(x).map(softplus);
        self.push(Op::Softplus(x), v)
    }

    pub fn exp(&mut self, x: ValueId) -> Result<ValueId> {
        let v = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), v)
    }

    pub fn log(&mut self, x: ValueId) -> Result<ValueId> {
        let v = self.value(x).map(f64::ln);
        self.push(Op::Log(x), v)
    }

    pub fn square(&mut self, x: ValueId) -> Result<ValueId> {
        let v = self.value(x).map(|a| a * a);
        self.push(Op::Square(x), v)
    }

    pub fn affine(&mut self, x: ValueId, a: f64, c: f64) -> Result<ValueId> {
        let v = self.value(x).map(|t| a * t + c);
        let _ = c;
        self.push(Op::Affine { x, a }, v)
    }

    pub fn max_const(&mut self, x: ValueId, c: f64) -> Result<ValueId> {
        let v = self.value(x).map(|t| if t > c { t } else { c });
        self.push(Op::MaxConst { x, c }, v)
    }

    pub fn min_const(&mut self, x: ValueId, c: f64) -> Result<ValueId> {
        let v = self.value(x).map(|t| if t < c { t } else { c });
        self.push(Op::MinConst { x, c }, v)
    }

    fn binary(&mut self, a: ValueId, b: ValueId, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<ValueId> {
        let v = self.value(a).zip(self.value(b), f)?;
        self.push(op, v)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn mul_const_t(&mut self, x: ValueId, k: &Tensor) -> Result<ValueId> {
        let v = self.value(x).zip(k, |a, b| a * b)?;
        self.push(Op::MulConstT { x, k: k.clone() }, v)
    }

    pub fn add_const_t(&mut self, x: ValueId, k: &Tensor) -> Result<ValueId> {
        let v = self.value(x).zip(k, |a, b| a + b)?;
        self.push(Op::AddConstT { x }, v)
    }

    pub fn concat(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::Dim("concat of nothing".into()));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::Dim("concat row mismatch".into()));
            }
            cols += self.value(p).cols();
        }
        let mut out = vec![0.0; rows * cols];
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for r in 0..rows {
                out[r * cols + off..r * cols + off + c]
                    .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
            off += c;
        }
        let v = Tensor::new(vec![rows, cols], out)?;
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            v,
        )
    }

    pub fn gather_rows(&mut self, table: ValueId, idx: &[usize]) -> Result<ValueId> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &j in idx {
            if j >= rows {
                return Err(Error::Contract(format!(
                    "embedding row {j} out of range ({rows} rows)"
                )));
            }
            out.extend_from_slice(&t.data()[j * cols..(j + 1) * cols]);
        }
        let v = Tensor::new(vec![idx.len(), cols], out)?;
        self.push(
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            v,
        )
    }

    pub fn row_scale(&mut self, x: ValueId, w: ValueId) -> Result<ValueId> {
        let (xt, wt) = (self.value(x), self.value(w));
        let (m, c) = (xt.rows(), xt.cols());
        if wt.numel() != m {
            return Err(Error::Dim(format!(
                "row_scale: x {:?} w {:?}",
                xt.shape(),
                wt.shape()
            )));
        }
        let mut out = Vec::with_capacity(m * c);
        for r in 0..m {
            let s = wt.data()[r];
            out.extend(xt.data()[r * c..(r + 1) * c].iter().map(|v| v * s));
        }
        let v = Tensor::new(vec![m, c], out)?;
        self.push(Op::RowScale { x, w }, v)
    }

    pub fn repeat_cols(&mut self, x: ValueId, c: usize) -> Result<ValueId> {
        let xt = self.value(x);
        if xt.cols() != 1 {
            return Err(Error::Dim("repeat_cols wants a single column".into()));
        }
        let m = xt.rows();
        let mut out = Vec::with_capacity(m * c);
        for r in 0..m {
            out.extend(std::iter::repeat(xt.data()[r]).take(c));
        }
        let v = Tensor::new(vec![m, c], out)?;
        self.push(Op::RepeatCols { x, c }, v)
    }

    pub fn segment_sum(&mut self, x: ValueId, group: usize) -> Result<ValueId> {
        let xt = self.value(x);
        let (m, c) = (xt.rows(), xt.cols());
        if group == 0 || m % group != 0 {
            return Err(Error::Dim(format!(
                "segment_sum: {m} rows not divisible by group {group}"
            )));
        }
        let segs = m / group;
        let mut out = vec![0.0; segs * c];
        for r in 0..m {
            let s = r / group;
            for k in 0..c {
                out[s * c + k] += xt.data()[r * c + k];
            }
        }
        let v = Tensor::new(vec![segs, c], out)?;
        self.push(Op::SegmentSum { x, group }, v)
    }

    pub fn sum_axis1(&mut self, x: ValueId) -> Result<ValueId> {
        let xt = self.value(x);
        let (m, c) = (xt.rows(), xt.cols());
        let mut out = vec![0.0; m];
        for r in 0..m {
            out[r] = xt.data()[r * c..(r + 1) * c].iter().sum();
        }
        let v = Tensor::from_vec(out);
        self.push(Op::SumAxis1 { x }, v)
    }

    pub fn sum_all(&mut self, x: ValueId) -> Result<ValueId> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::SumAll { x }, Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, x: ValueId) -> Result<ValueId> {
        let t = self.value(x);
        let s: f64 = t.data().iter().sum();
        let n = t.numel() as f64;
        self.push(Op::MeanAll { x }, Tensor::scalar(s / n))
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let v = self.value(x).reshaped(shape)?;
        self.push(Op::Reshape { x }, v)
    }

    pub fn slice_rows(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let xt = self.value(x);
        let (m, c) = (xt.rows(), xt.cols());
        if start + len > m {
            return Err(Error::Dim(format!(
                "slice_rows {start}+{len} out of {m} rows"
            )));
        }
        let v = Tensor::new(
            vec![len, c],
            xt.data()[start * c..(start + len) * c].to_vec(),
        )?;
        self.push(Op::SliceRows { x, start, len }, v)
    }

    /// Compositing weights from per-sample opacities, one ray per row.
    pub fn render_weights(&mut self, alpha: ValueId) -> Result<ValueId> {
        let at = self.value(alpha);
        let (b, n) = (at.rows(), at.cols());
        let mut out = vec![0.0; b * n];
        for r in 0..b {
            let arow = &at.data()[r * n..(r + 1) * n];
            let mut trans = 1.0;
            for i in 0..n {
                out[r * n + i] = trans * arow[i];
                trans *= 1.0 - arow[i];
            }
        }
        let v = Tensor::new(vec![b, n], out)?;
        self.push(Op::RenderWeights { alpha }, v)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Every node on a path from a
    /// trainable leaf to the loss gets a gradient; others stay `None`.
    pub fn backward(&self, loss: ValueId) -> Result<Grads> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for ni in (0..=loss.0).rev() {
            if !self.nodes[ni].needs_grad {
                continue;
            }
            let Some(g) = grads[ni].take() else { continue };
            self.distribute(ni, &g, &mut grads)?;
            grads[ni] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], id: ValueId, delta: Tensor) -> Result<()> {
        if !self.nodes[id.0].needs_grad {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn distribute(&self, ni: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[ni];
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (bsz, i) = (xt.rows(), xt.cols());
                let o = wt.rows();
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![0.0; bsz * i];
                    for r in 0..bsz {
                        let grow = &g.data()[r * o..(r + 1) * o];
                        let drow = &mut dx[r * i..(r + 1) * i];
                        for (oc, wrow) in wrow_iter(wt.data(), o, i).enumerate() {
                            let gv = grow[oc];
                            for k in 0..i {
                                drow[k] += gv * wrow[k];
                            }
                        }
                    }
                    self.accum(grads, *x, Tensor::new(vec![bsz, i], dx)?)?;
                }
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![0.0; o * i];
                    for r in 0..bsz {
                        let grow = &g.data()[r * o..(r + 1) * o];
                        let xrow = &xt.data()[r * i..(r + 1) * i];
                        for oc in 0..o {
                            let gv = grow[oc];
                            let wrow = &mut dw[oc * i..(oc + 1) * i];
                            for k in 0..i {
                                wrow[k] += gv * xrow[k];
                            }
                        }
                    }
                    self.accum(grads, *w, Tensor::new(vec![o, i], dw)?)?;
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; o];
                    for r in 0..bsz {
                        for oc in 0..o {
                            db[oc] += g.data()[r * o + oc];
                        }
                    }
                    self.accum(grads, *b, Tensor::new(self.value(*b).shape().to_vec(), db)?)?;
                }
            }
            Op::Relu(x) => {
                let d = self.value(*x).zip_with_grad(g, |xv, gv| if xv > 0.0 { gv } else { 0.0 })?;
                self.accum(grads, *x, d)?;
            }
            Op::Sigmoid(x) => {
                let d = node.value.zip_with_grad(g, |y, gv| gv * y * (1.0 - y))?;
                self.accum(grads, *x, d)?;
            }
            Op::Softplus(x) => {
                let d = self.value(*x).zip_with_grad(g, |xv, gv| gv * sigmoid(xv))?;
                self.accum(grads, *x, d)?;
            }
            Op::Exp(x) => {
                let d = node.value.zip_with_grad(g, |y, gv| gv * y)?;
                self.accum(grads, *x, d)?;
            }
            Op::Log(x) => {
                let d = self.value(*x).zip_with_grad(g, |xv, gv| gv / xv)?;
                self.accum(grads, *x, d)?;
            }
            Op::Square(x) => {
                let d = self.value(*x).zip_with_grad(g, |xv, gv| gv * 2.0 * xv)?;
                self.accum(grads, *x, d)?;
            }
            Op::Affine { x, a, .. } => {
                let a = *a;
                self.accum(grads, *x, g.map(|gv| gv * a))?;
            }
            Op::MaxConst { x, c } => {
                let c = *c;
                let d = self.value(*x).zip_with_grad(g, |xv, gv| if xv > c { gv } else { 0.0 })?;
                self.accum(grads, *x, d)?;
            }
            Op::MinConst { x, c } => {
                let c = *c;
                let d = self.value(*x).zip_with_grad(g, |xv, gv| if xv < c { gv } else { 0.0 })?;
                self.accum(grads, *x, d)?;
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone())?;
                self.accum(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone())?;
                self.accum(grads, *b, g.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let d = self.value(*b).zip_with_grad(g, |bv, gv| gv * bv)?;
                    self.accum(grads, *a, d)?;
                }
                if self.nodes[b.0].needs_grad {
                    let d = self.value(*a).zip_with_grad(g, |av, gv| gv * av)?;
                    self.accum(grads, *b, d)?;
                }
            }
            Op::Div(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let d = bt.zip_with_grad(g, |bv, gv| gv / bv)?;
                    self.accum(grads, *a, d)?;
                }
                if self.nodes[b.0].needs_grad {
                    let mut data = Vec::with_capacity(g.numel());
                    for i in 0..g.numel() {
                        let (av, bv, gv) = (at.data()[i], bt.data()[i], g.data()[i]);
                        data.push(-gv * av / (bv * bv));
                    }
                    self.accum(grads, *b, Tensor::new(bt.shape().to_vec(), data)?)?;
                }
            }
            Op::MulConstT { x, k } => {
                let d = k.zip_with_grad(g, |kv, gv| gv * kv)?;
                self.accum(grads, *x, d)?;
            }
            Op::AddConstT { x } => {
                self.accum(grads, *x, g.clone())?;
            }
            Op::Concat { parts } => {
                let rows = node.value.rows();
                let cols = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.nodes[p.0].needs_grad {
                        let mut d = vec![0.0; rows * c];
                        for r in 0..rows {
                            d[r * c..(r + 1) * c]
                                .copy_from_slice(&g.data()[r * cols + off..r * cols + off + c]);
                        }
                        self.accum(grads, p, Tensor::new(vec![rows, c], d)?)?;
                    }
                    off += c;
                }
            }
            Op::GatherRows { table, idx } => {
                let t = self.value(*table);
                let cols = t.cols();
                let mut d = vec![0.0; t.numel()];
                for (r, &j) in idx.iter().enumerate() {
                    for k in 0..cols {
                        d[j * cols + k] += g.data()[r * cols + k];
                    }
                }
                self.accum(grads, *table, Tensor::new(t.shape().to_vec(), d)?)?;
            }
            Op::RowScale { x, w } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (m, c) = (xt.rows(), xt.cols());
                if self.nodes[x.0].needs_grad {
                    let mut d = Vec::with_capacity(m * c);
                    for r in 0..m {
                        let s = wt.data()[r];
                        d.extend(g.data()[r * c..(r + 1) * c].iter().map(|v| v * s));
                    }
                    self.accum(grads, *x, Tensor::new(vec![m, c], d)?)?;
                }
                if self.nodes[w.0].needs_grad {
                    let mut d = vec![0.0; m];
                    for r in 0..m {
                        for k in 0..c {
                            d[r] += g.data()[r * c + k] * xt.data()[r * c + k];
                        }
                    }
                    self.accum(grads, *w, Tensor::new(wt.shape().to_vec(), d)?)?;
                }
            }
            Op::RepeatCols { x, c } => {
                let m = self.value(*x).rows();
                let mut d = vec![0.0; m];
                for r in 0..m {
                    d[r] = g.data()[r * c..(r + 1) * c].iter().sum();
                }
                self.accum(grads, *x, Tensor::new(self.value(*x).shape().to_vec(), d)?)?;
            }
            Op::SegmentSum { x, group } => {
                let xt = self.value(*x);
                let (m, c) = (xt.rows(), xt.cols());
                let mut d = Vec::with_capacity(m * c);
                for r in 0..m {
                    let s = r / group;
                    d.extend_from_slice(&g.data()[s * c..(s + 1) * c]);
                }
                self.accum(grads, *x, Tensor::new(vec![m, c], d)?)?;
            }
            Op::SumAxis1 { x } => {
                let xt = self.value(*x);
                let (m, c) = (xt.rows(), xt.cols());
                let mut d = Vec::with_capacity(m * c);
                for r in 0..m {
                    d.extend(std::iter::repeat(g.data()[r]).take(c));
                }
                self.accum(grads, *x, Tensor::new(xt.shape().to_vec(), d)?)?;
            }
            Op::SumAll { x } => {
                let gv = g.data()[0];
                let xt = self.value(*x);
                self.accum(grads, *x, Tensor::new(xt.shape().to_vec(), vec![gv; xt.numel()])?)?;
            }
            Op::MeanAll { x } => {
                let xt = self.value(*x);
                let gv = g.data()[0] / xt.numel() as f64;
                self.accum(grads, *x, Tensor::new(xt.shape().to_vec(), vec![gv; xt.numel()])?)?;
            }
            Op::Reshape { x } => {
                let d = g.reshaped(self.value(*x).shape().to_vec())?;
                self.accum(grads, *x, d)?;
            }
            Op::SliceRows { x, start, len } => {
                let xt = self.value(*x);
                let c = xt.cols();
                let mut d = vec![0.0; xt.numel()];
                d[start * c..(start + len) * c].copy_from_slice(g.data());
                self.accum(grads, *x, Tensor::new(xt.shape().to_vec(), d)?)?;
            }
            Op::RenderWeights { alpha } => {
                let at = self.value(*alpha);
                let (b, n) = (at.rows(), at.cols());
                let mut d = vec![0.0; b * n];
                for r in 0..b {
                    let arow = &at.data()[r * n..(r + 1) * n];
                    let grow = &g.data()[r * n..(r + 1) * n];
                    // Prefix transmittances P_j = prod_{k<j}(1 - a_k).
                    let mut prefix = vec![1.0; n + 1];
                    for k in 0..n {
                        prefix[k + 1] = prefix[k] * (1.0 - arow[k]);
                    }
                    for j in 0..n {
                        // Direct term: dw_j/da_j = P_j.
                        let mut acc = grow[j] * prefix[j];
                        // Later weights lose transmittance through (1 - a_j);
                        // build prod_{k<i, k!=j}(1 - a_k) incrementally to
                        // stay division-free (a_k may be exactly 1).
                        let mut q = prefix[j];
                        for i in (j + 1)..n {
                            acc -= grow[i] * arow[i] * q;
                            q *= 1.0 - arow[i];
                        }
                        d[r * n + j] = acc;
                    }
                }
                self.accum(grads, *alpha, Tensor::new(vec![b, n], d)?)?;
            }
        }
        Ok(())
    }
}

fn wrow_iter(w: &[f64], o: usize, i: usize) -> impl Iterator<Item = &[f64]> {
    (0..o).map(move |r| &w[r * i..(r + 1) * i])
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    // Overflow-safe: softplus(x) = max(x, 0) + ln(1 + exp(-|x|)).
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tensor {
    /// Elementwise combine with a gradient of identical shape.
    fn zip_with_grad(&self, g: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.zip(g, f)
    }
}
