use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dropout behaviour for one forward pass.
pub enum Dropout<'r> {
    Off,
    On(&'r mut dyn RngCore),
}

impl Dropout<'_> {
    pub fn is_on(&self) -> bool {
        matches!(self, Dropout::On(_))
    }
}

#[derive(Debug)]
enum Op<S> {
    Constant,
    Param,
    MatMul(NodeId, NodeId),
    Affine(NodeId, NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    Transpose(NodeId),
    SoftmaxRows(NodeId),
    LeakyRelu(NodeId, S),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Vec<S>,
        inv_std: Vec<S>,
    },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    MeanRows(NodeId),
    Dropout(NodeId, Vec<S>),
    CrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<S>,
    },
    Sum(NodeId),
}

impl<S> Op<S> {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Constant | Op::Param => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Affine(x, w, b) => vec![*x, *w, *b],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::LeakyRelu(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::MeanRows(a)
            | Op::Dropout(a, _)
            | Op::Sum(a) => vec![*a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<'a, S: Scalar> {
    value: Cow<'a, Tensor<S>>,
    op: Op<S>,
}

/// Gradients of a scalar loss with respect to the parameters that took part
/// in its computation, keyed by parameter index.
#[derive(Clone, Debug, Default)]
pub struct Gradients<S: Scalar> {
    by_param: BTreeMap<usize, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, param: usize) -> Option<&Tensor<S>> {
        self.by_param.get(&param)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor<S>)> {
        self.by_param.iter().map(|(&k, v)| (k, v))
    }

    /// Dense list in parameter order; parameters that did not contribute
    /// get exact zeros of the given shapes.
    pub fn into_dense<'s>(mut self, shapes: impl IntoIterator<Item = &'s [usize]>) -> Vec<Tensor<S>> {
        shapes
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                self.by_param
                    .remove(&i)
                    .unwrap_or_else(|| Tensor::zeros(shape))
            })
            .collect()
    }
}

/// Tape of tensor operations supporting one reverse sweep.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction. Parameters are borrowed, not copied.
pub struct Graph<'a, S: Scalar> {
    nodes: Vec<Node<'a, S>>,
    params: BTreeMap<usize, NodeId>,
}

impl<S: Scalar> Default for Graph<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'a, S: Scalar> Graph<'a, S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn check(&self, id: NodeId) -> Result<&Tensor<S>> {
        self.nodes
            .get(id.0)
            .map(|n| &*n.value)
            .ok_or(Error::UnknownNode(id.0))
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<S>, op: Op<S>) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a tensor that receives no gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Constant,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Like [`Graph::constant`] but borrows the tensor.
    pub fn input(&mut self, value: &'a Tensor<S>) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Constant,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers parameter `index`. Repeated calls with the same index
    /// return the same node.
    pub fn param(&mut self, index: usize, value: &'a Tensor<S>) -> NodeId {
        if let Some(&id) = self.params.get(&index) {
            return id;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Param,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.params.insert(index, id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::matrix(m, n, matmul_raw(ta.data(), tb.data(), m, k, n))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// `x * w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (tx, tw, tb) = (self.check(x)?, self.check(w)?, self.check(b)?);
        if tx.cols() != tw.rows() {
            return Err(shape_err("affine", tx, tw));
        }
        if tb.len() != tw.cols() {
            return Err(shape_err("affine", tw, tb));
        }
        let (m, k, n) = (tx.rows(), tx.cols(), tw.cols());
        let mut data = matmul_raw(tx.data(), tw.data(), m, k, n);
        for row in data.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o = *o + bv;
            }
        }
        let out = Tensor::matrix(m, n, data)?;
        self.push("affine", out, Op::Affine(x, w, b))
    }

    fn zip_same(&self, op: &'static str, a: NodeId, b: NodeId, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if !ta.same_matrix_shape(tb) {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::matrix(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: S) -> Result<NodeId> {
        let out = self.check(a)?.as_matrix().map(|v| v * factor);
        self.push("scale", out, Op::Scale(a, factor))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.check(a)?;
        let (m, n) = (t.rows(), t.cols());
        let mut data = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = t.data()[i * n + j];
            }
        }
        let out = Tensor::matrix(n, m, data)?;
        self.push("transpose", out, Op::Transpose(a))
    }

    /// Row-wise softmax, stabilised by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.check(a)?;
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "softmax_rows" });
        }
        let n = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = Tensor::matrix(t.rows(), n, data)?;
        self.push("softmax_rows", out, Op::SoftmaxRows(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: S) -> Result<NodeId> {
        if !(slope > S::zero() && slope <= S::one()) {
            return Err(Error::Config(alloc::format!(
                "leaky_relu slope must lie in (0, 1], got {:?}",
                slope
            )));
        }
        let out = self
            .check(a)?
            .as_matrix()
            .map(|v| if v >= S::zero() { v } else { slope * v });
        self.push("leaky_relu", out, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.check(a)?.as_matrix().map(|v| v.max(S::zero()));
        self.push("relu", out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.check(a)?.as_matrix().map(|v| v.tanh());
        self.push("tanh", out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.check(a)?.as_matrix().map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    /// Per-row standardisation followed by `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: S) -> Result<NodeId> {
        let (tx, tg, tb) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let d = tx.cols();
        if tg.len() != d {
            return Err(shape_err("layer_norm", tx, tg));
        }
        if tb.len() != d {
            return Err(shape_err("layer_norm", tx, tb));
        }
        let n = S::from_f64(d as f64);
        let mut normalized = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(tx.rows());
        let mut out = Vec::with_capacity(tx.len());
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let mean = row.iter().fold(S::zero(), |a, &v| a + v) / n;
            let var = row
                .iter()
                .fold(S::zero(), |a, &v| a + (v - mean) * (v - mean))
                / n;
            let is = S::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mean) * is;
                normalized.push(xh);
                out.push(tg.data()[j] * xh + tb.data()[j]);
            }
        }
        let out = Tensor::matrix(tx.rows(), d, out)?;
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        )
    }

    /// Stacks inputs vertically (time axis).
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = self.check(*parts.first().ok_or(Error::Config("concat_rows of nothing".into()))?)?;
        let cols = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.check(p)?;
            if t.cols() != cols {
                return Err(shape_err("concat_rows", first, t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()))
    }

    /// Joins inputs side by side (feature axis).
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = self.check(*parts.first().ok_or(Error::Config("concat_cols of nothing".into()))?)?;
        let rows = first.rows();
        let mut total = 0;
        for &p in parts {
            let t = self.check(p)?;
            if t.rows() != rows {
                return Err(shape_err("concat_cols", first, t));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.check(a)?;
        if len == 0 || start + len > t.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let c = t.cols();
        let out = Tensor::matrix(len, c, t.data()[start * c..(start + len) * c].to_vec())?;
        self.push("slice_rows", out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.check(a)?;
        if len == 0 || start + len > t.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let out = Tensor::matrix(t.rows(), len, data)?;
        self.push("slice_cols", out, Op::SliceCols(a, start))
    }

    /// Mean over the time (row) axis: `T x D -> 1 x D`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.check(a)?;
        let (m, n) = (t.rows(), t.cols());
        let mut data = vec![S::zero(); n];
        for r in 0..m {
            for (o, &v) in data.iter_mut().zip(t.row(r)) {
                *o = *o + v;
            }
        }
        let inv = S::one() / S::from_f64(m as f64);
        for o in &mut data {
            *o = *o * inv;
        }
        let out = Tensor::matrix(1, n, data)?;
        self.push("mean_rows", out, Op::MeanRows(a))
    }

    /// Inverted dropout. Identity when `p == 0` or dropout is off.
    pub fn dropout(&mut self, a: NodeId, p: S, mode: &mut Dropout<'_>) -> Result<NodeId> {
        let rng = match mode {
            Dropout::On(rng) if p > S::zero() => rng,
            _ => return Ok(a),
        };
        if p >= S::one() {
            return Err(Error::Config("dropout probability must be < 1".into()));
        }
        let t = self.check(a)?;
        let keep = S::one() / (S::one() - p);
        let p64 = p.as_f64();
        let mask: Vec<S> = (0..t.len())
            .map(|_| {
                if rng.random::<f64>() < p64 {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::matrix(t.rows(), t.cols(), data)?;
        self.push("dropout", out, Op::Dropout(a, mask))
    }

    /// `-log softmax(logits)[label]` for a single row of logits, computed
    /// with log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let t = self.check(logits)?;
        if t.rows() != 1 {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: t.shape().to_vec(),
                right: vec![1, t.cols()],
            });
        }
        let c = t.cols();
        if label >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let max = t.data().iter().fold(S::neg_infinity(), |m, &v| m.max(v));
        let sum = t.data().iter().fold(S::zero(), |a, &v| a + (v - max).exp());
        let log_z = max + sum.ln();
        let probs: Vec<S> = t.data().iter().map(|&v| (v - log_z).exp()).collect();
        let loss = log_z - t.data()[label];
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.check(a)?.sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>> {
        let lt = self.check(loss)?;
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![S::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let inputs = node.op.inputs();
            if inputs.iter().any(|i| i.0 >= idx) {
                return Err(Error::Cycle { node: idx });
            }
            if let Op::Param = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        let mut by_param = BTreeMap::new();
        for (&index, &id) in &self.params {
            if id.0 > loss.0 {
                continue;
            }
            if let Some(g) = grads[id.0].take() {
                let shape = self.nodes[id.0].value.shape().to_vec();
                by_param.insert(index, Tensor::new(shape, g)?);
            }
        }
        Ok(Gradients { by_param })
    }

    fn propagate(&self, idx: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[idx];
        let out = &*node.value;
        let val = |id: NodeId| -> &Tensor<S> { &self.nodes[id.0].value };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.wants(*a) {
                    accumulate(grads, *a, matmul_nt_raw(g, tb.data(), m, n, k));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, matmul_tn_raw(ta.data(), g, m, k, n));
                }
            }
            Op::Affine(x, w, b) => {
                let (tx, tw) = (val(*x), val(*w));
                let (m, k, n) = (tx.rows(), tx.cols(), tw.cols());
                if self.wants(*x) {
                    accumulate(grads, *x, matmul_nt_raw(g, tw.data(), m, n, k));
                }
                if self.wants(*w) {
                    accumulate(grads, *w, matmul_tn_raw(tx.data(), g, m, k, n));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, column_sums(g, n));
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.wants(*a) {
                    accumulate(grads, *a, g.iter().zip(tb.data()).map(|(&d, &y)| d * y).collect());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.iter().zip(ta.data()).map(|(&d, &x)| d * x).collect());
                }
            }
            Op::Scale(a, f) => accumulate(grads, *a, g.iter().map(|&d| d * *f).collect()),
            Op::Transpose(a) => {
                let (m, n) = (out.rows(), out.cols());
                let mut d = vec![S::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[j * m + i] = g[i * n + j];
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                let mut d = Vec::with_capacity(g.len());
                for (yr, gr) in out.data().chunks(n).zip(g.chunks(n)) {
                    let dot = yr.iter().zip(gr).fold(S::zero(), |acc, (&y, &gg)| acc + y * gg);
                    d.extend(yr.iter().zip(gr).map(|(&y, &gg)| y * (gg - dot)));
                }
                accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(*a);
                let d = g
                    .iter()
                    .zip(x.data())
                    .map(|(&gg, &v)| if v >= S::zero() { gg } else { gg * *slope })
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let x = val(*a);
                let d = g
                    .iter()
                    .zip(x.data())
                    .map(|(&gg, &v)| if v > S::zero() { gg } else { S::zero() })
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(&gg, &y)| gg * (S::one() - y * y))
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(&gg, &y)| gg * y * (S::one() - y))
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let d = out.cols();
                let tg = val(*gamma);
                let n = S::from_f64(d as f64);
                if self.wants(*gamma) {
                    let mut dg = vec![S::zero(); d];
                    for (gr, xr) in g.chunks(d).zip(normalized.chunks(d)) {
                        for j in 0..d {
                            dg[j] = dg[j] + gr[j] * xr[j];
                        }
                    }
                    accumulate(grads, *gamma, dg);
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, column_sums(g, d));
                }
                if self.wants(*x) {
                    let mut dx = Vec::with_capacity(g.len());
                    for ((gr, xr), &is) in g.chunks(d).zip(normalized.chunks(d)).zip(inv_std) {
                        let mut mean_d = S::zero();
                        let mut mean_dx = S::zero();
                        for j in 0..d {
                            let dxh = gr[j] * tg.data()[j];
                            mean_d = mean_d + dxh;
                            mean_dx = mean_dx + dxh * xr[j];
                        }
                        mean_d = mean_d / n;
                        mean_dx = mean_dx / n;
                        for j in 0..d {
                            let dxh = gr[j] * tg.data()[j];
                            dx.push(is * (dxh - mean_d - xr[j] * mean_dx));
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    accumulate(grads, p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).cols();
                    let mut d = Vec::with_capacity(val(p).len());
                    for row in g.chunks(total) {
                        d.extend_from_slice(&row[offset..offset + c]);
                    }
                    accumulate(grads, p, d);
                    offset += c;
                }
            }
            Op::SliceRows(a, start) => {
                let src = val(*a);
                let c = src.cols();
                let mut d = vec![S::zero(); src.len()];
                d[start * c..start * c + g.len()].copy_from_slice(g);
                accumulate(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let (c, len) = (src.cols(), out.cols());
                let mut d = vec![S::zero(); src.len()];
                for (r, row) in g.chunks(len).enumerate() {
                    d[r * c + start..r * c + start + len].copy_from_slice(row);
                }
                accumulate(grads, *a, d);
            }
            Op::MeanRows(a) => {
                let src = val(*a);
                let inv = S::one() / S::from_f64(src.rows() as f64);
                let mut d = Vec::with_capacity(src.len());
                for _ in 0..src.rows() {
                    d.extend(g.iter().map(|&v| v * inv));
                }
                accumulate(grads, *a, d);
            }
            Op::Dropout(a, mask) => {
                accumulate(grads, *a, g.iter().zip(mask).map(|(&d, &m)| d * m).collect());
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let mut d: Vec<S> = probs.iter().map(|&p| p * g[0]).collect();
                d[*label] = d[*label] - g[0];
                accumulate(grads, *logits, d);
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                accumulate(grads, *a, vec![g[0]; n]);
            }
        }
    }

    /// Constants never need gradients; skipping them saves work.
    fn wants(&self, id: NodeId) -> bool {
        !matches!(self.nodes[id.0].op, Op::Constant)
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], id: NodeId, d: Vec<S>) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(d) {
                *e = *e + v;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

fn column_sums<S: Scalar>(g: &[S], n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n];
    for row in g.chunks(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

#[inline]
fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}
