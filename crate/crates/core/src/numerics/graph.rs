use std::rc::Rc;

use super::kernels::{mm, mm_nt, mm_tn};
use super::{ensure_finite, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f32>,
        rstd: Vec<f32>,
    },
    Gather {
        table: Var,
        ids: Rc<[usize]>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f32>,
        count: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Nodes are appended as operations run, so inputs always precede their
/// consumers. A graph supports exactly one backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf; `None` when the leaf is
    /// untracked or the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[f32]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f32>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Accumulates the gradient of `var` into `tensor.grad`.
    pub fn apply_to(&self, var: Var, tensor: &mut Tensor) -> Result<()> {
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn matrix_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::invalid(format!("{op}: expected a matrix, got {shape:?}"))),
    }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a recorded value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph values are finite")
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f32> {
        let n = &self.nodes[v.0];
        if n.value.len() != 1 {
            return Err(Error::NotScalar(n.shape.clone()));
        }
        Ok(n.value[0])
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Vec<f32>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        ensure_finite(name, &value)?;
        Ok(self.push(shape, value, op, requires_grad))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a copy of `t` as a leaf; tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records an untracked leaf.
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.shape(a))?;
        let (k2, n) = matrix_dims("matmul", self.shape(b))?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        mm(&mut out, self.value(a), self.value(b), m, k, n);
        let rg = self.rg(&[a, b]);
        self.push_checked("matmul", vec![m, n], out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul_nt", self.shape(a))?;
        let (n, k2) = matrix_dims("matmul_nt", self.shape(b))?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        mm_nt(&mut out, self.value(a), self.value(b), m, k, n);
        let rg = self.rg(&[a, b]);
        self.push_checked("matmul_nt", vec![m, n], out, Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        self.push_checked("add", self.shape(a).to_vec(), out, Op::Add(a, b), rg)
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = matrix_dims("add_row", self.shape(x))?;
        if self.shape(bias) != [n] {
            return Err(shape_err("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(v, w)| v + w))
            .collect();
        let rg = self.rg(&[x, bias]);
        self.push_checked("add_row", self.shape(x).to_vec(), out, Op::AddRow(x, bias), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(&[a, b]);
        self.push_checked("mul", self.shape(a).to_vec(), out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let rg = self.rg(&[x]);
        self.push_checked("scale", self.shape(x).to_vec(), out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let rg = self.rg(&[x]);
        self.push_checked("relu", self.shape(x).to_vec(), out, Op::Relu(x), rg)
    }

    /// Softmax over `axis`, with per-slice max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(format!(
                "softmax: axis {axis} out of range for shape {shape:?}"
            )));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let xs = self.value(x);
        let mut out = vec![0.0; xs.len()];
        let mut slice = vec![0.0f32; len];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                for (i, s) in slice.iter_mut().enumerate() {
                    *s = xs[idx(i)];
                }
                softmax_in_place(&mut slice, None);
                for (i, s) in slice.iter().enumerate() {
                    out[idx(i)] = *s;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push_checked("softmax", shape, out, Op::Softmax { x, axis }, rg)
    }

    /// Row-wise softmax of a matrix where entries with `keep == false` get
    /// weight exactly zero (an additive `-inf` bias).
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (m, n) = matrix_dims("masked_softmax", self.shape(x))?;
        if keep.len() != m * n {
            return Err(shape_err("masked_softmax", self.shape(x), &[keep.len()]));
        }
        let mut out = self.value(x).to_vec();
        for (r, (row, mask)) in out.chunks_exact_mut(n).zip(keep.chunks_exact(n)).enumerate() {
            if !mask.iter().any(|&k| k) {
                return Err(Error::invalid(format!(
                    "masked_softmax: query row {r} has every key masked"
                )));
            }
            softmax_in_place(row, Some(mask));
        }
        let rg = self.rg(&[x]);
        self.push_checked("masked_softmax", vec![m, n], out, Op::MaskedSoftmax(x), rg)
    }

    /// Normalises each row to zero mean and unit variance, then applies a
    /// per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f32) -> Result<Var> {
        let (m, n) = matrix_dims("layer_norm", self.shape(x))?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut normed = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f32>() / n as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n as f32;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                normed[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normed,
            rstd,
        };
        self.push_checked("layer_norm", vec![m, n], out, op, rg)
    }

    /// Selects rows of a `V×d` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = matrix_dims("gather_rows", self.shape(table))?;
        if ids.is_empty() {
            return Err(Error::invalid("gather_rows: no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!(
                "gather_rows: id {bad} out of range for {rows} rows"
            )));
        }
        let t = self.value(table);
        let out = ids.iter().flat_map(|&i| t[i * d..(i + 1) * d].iter().copied()).collect();
        let rg = self.rg(&[table]);
        let op = Op::Gather {
            table,
            ids: ids.into(),
        };
        self.push_checked("gather_rows", vec![ids.len(), d], out, op, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = matrix_dims("slice_cols", self.shape(x))?;
        if len == 0 || start + len > n {
            return Err(Error::invalid(format!(
                "slice_cols: [{start}, {}) out of range for {n} columns",
                start + len
            )));
        }
        let xs = self.value(x);
        let out = (0..m)
            .flat_map(|r| xs[r * n + start..r * n + start + len].iter().copied())
            .collect();
        let rg = self.rg(&[x]);
        self.push_checked("slice_cols", vec![m, len], out, Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols: no inputs"))?;
        let (m, _) = matrix_dims("concat_cols", self.shape(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = matrix_dims("concat_cols", self.shape(p))?;
            if r != m {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        self.push_checked("concat_cols", vec![m, total], out, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, skipping positions equal to `ignore_index`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore_index: u32) -> Result<Var> {
        let (n, vocab) = matrix_dims("cross_entropy", self.shape(logits))?;
        if targets.len() != n {
            return Err(shape_err("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        let mut tgt = Vec::with_capacity(n);
        for &t in targets {
            if t == ignore_index {
                tgt.push(None);
            } else if (t as usize) < vocab {
                tgt.push(Some(t as usize));
            } else {
                return Err(Error::invalid(format!(
                    "cross_entropy: target {t} out of range for {vocab} classes"
                )));
            }
        }
        let count = tgt.iter().flatten().count();
        if count == 0 {
            return Err(Error::invalid("cross_entropy: every position is ignored"));
        }
        let mut probs = self.value(logits).to_vec();
        let mut total = 0.0f64;
        for (row, t) in probs.chunks_exact_mut(vocab).zip(&tgt) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max as f64 + row.iter().map(|v| ((v - max) as f64).exp()).sum::<f64>().ln();
            if let Some(t) = *t {
                total += lse - row[t] as f64;
            }
            softmax_in_place(row, None);
        }
        let loss = (total / count as f64) as f32;
        let rg = self.rg(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            targets: tgt,
            probs,
            count,
        };
        self.push_checked("cross_entropy", vec![1], vec![loss], op, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().map(|&v| v as f64).sum::<f64>() as f32;
        let rg = self.rg(&[x]);
        self.push_checked("sum", vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f32;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a scalar `loss`. Consumes the graph: a second call
    /// returns [`Error::GraphConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NotScalar(self.nodes[loss.0].shape.clone()));
        }
        self.consumed = true;

        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; nodes.len()];
        if !nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        let buf = grad_slot;

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    if let Some(da) = buf(nodes, &mut grads, *a) {
                        mm_nt(da, &dy, &nodes[b.0].value, m, n, k);
                    }
                    if let Some(db) = buf(nodes, &mut grads, *b) {
                        mm_tn(db, &nodes[a.0].value, &dy, m, k, n);
                    }
                }
                Op::MatMulNT(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[0];
                    if let Some(da) = buf(nodes, &mut grads, *a) {
                        mm(da, &dy, &nodes[b.0].value, m, n, k);
                    }
                    if let Some(db) = buf(nodes, &mut grads, *b) {
                        mm_tn(db, &dy, &nodes[a.0].value, m, n, k);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(g) = buf(nodes, &mut grads, v) {
                            g.iter_mut().zip(&dy).for_each(|(g, d)| *g += d);
                        }
                    }
                }
                Op::AddRow(x, bias) => {
                    if let Some(g) = buf(nodes, &mut grads, *x) {
                        g.iter_mut().zip(&dy).for_each(|(g, d)| *g += d);
                    }
                    if let Some(g) = buf(nodes, &mut grads, *bias) {
                        let n = g.len();
                        for row in dy.chunks_exact(n) {
                            g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(g) = buf(nodes, &mut grads, *a) {
                        for j in 0..g.len() {
                            g[j] += dy[j] * vb[j];
                        }
                    }
                    if let Some(g) = buf(nodes, &mut grads, *b) {
                        for j in 0..g.len() {
                            g[j] += dy[j] * va[j];
                        }
                    }
                }
                Op::Scale(x, c) => {
                    if let Some(g) = buf(nodes, &mut grads, *x) {
                        g.iter_mut().zip(&dy).for_each(|(g, d)| *g += c * d);
                    }
                }
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    if let Some(g) = buf(nodes, &mut grads, *x) {
                        for j in 0..g.len() {
                            if xv[j] > 0.0 {
                                g[j] += dy[j];
                            }
                        }
                    }
                }
                Op::Softmax { x, axis } => {
                    let shape = &node.shape;
                    let len = shape[*axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let outer: usize = shape[..*axis].iter().product();
                    let y = &node.value;
                    if let Some(g) = buf(nodes, &mut grads, *x) {
                        for o in 0..outer {
                            for j in 0..inner {
                                let idx = |i: usize| (o * len + i) * inner + j;
                                let dot: f32 = (0..len).map(|i| dy[idx(i)] * y[idx(i)]).sum();
                                for i in 0..len {
                                    g[idx(i)] += y[idx(i)] * (dy[idx(i)] - dot);
                                }
                            }
                        }
                    }
                }
                Op::MaskedSoftmax(x) => {
                    let n = node.shape[1];
                    let y = &node.value;
                    if let Some(g) = buf(nodes, &mut grads, *x) {
                        for ((gr, yr), dr) in g
                            .chunks_exact_mut(n)
                            .zip(y.chunks_exact(n))
                            .zip(dy.chunks_exact(n))
                        {
                            let dot: f32 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                gr[j] += yr[j] * (dr[j] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    rstd,
                } => {
                    let n = node.shape[1];
                    if let Some(g) = buf(nodes, &mut grads, *bias) {
                        for row in dy.chunks_exact(n) {
                            g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                        }
                    }
                    if let Some(g) = buf(nodes, &mut grads, *gain) {
                        for (row, h) in dy.chunks_exact(n).zip(normed.chunks_exact(n)) {
                            for c in 0..n {
                                g[c] += row[c] * h[c];
                            }
                        }
                    }
                    let gv = &nodes[gain.0].value;
                    if let Some(g) = buf(nodes, &mut grads, *x) {
                        let mut dh = vec![0.0f32; n];
                        for (r, (row, h)) in dy.chunks_exact(n).zip(normed.chunks_exact(n)).enumerate() {
                            for c in 0..n {
                                dh[c] = row[c] * gv[c];
                            }
                            let sum_dh: f32 = dh.iter().sum();
                            let sum_dh_h: f32 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
                            let scale = rstd[r] / n as f32;
                            for c in 0..n {
                                g[r * n + c] += scale * (n as f32 * dh[c] - sum_dh - h[c] * sum_dh_h);
                            }
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    if let Some(g) = buf(nodes, &mut grads, *table) {
                        let d = node.shape[1];
                        for (row, &id) in dy.chunks_exact(d).zip(ids.iter()) {
                            g[id * d..(id + 1) * d]
                                .iter_mut()
                                .zip(row)
                                .for_each(|(g, v)| *g += v);
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let width = node.shape[1];
                    let n = nodes[x.0].shape[1];
                    if let Some(g) = buf(nodes, &mut grads, *x) {
                        for (r, row) in dy.chunks_exact(width).enumerate() {
                            g[r * n + start..r * n + start + width]
                                .iter_mut()
                                .zip(row)
                                .for_each(|(g, v)| *g += v);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.shape[1];
                    let mut offset = 0;
                    for p in parts {
                        let w = nodes[p.0].shape[1];
                        if let Some(g) = buf(nodes, &mut grads, *p) {
                            for (r, row) in dy.chunks_exact(total).enumerate() {
                                g[r * w..(r + 1) * w]
                                    .iter_mut()
                                    .zip(&row[offset..offset + w])
                                    .for_each(|(g, v)| *g += v);
                            }
                        }
                        offset += w;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let vocab = nodes[logits.0].shape[1];
                    let s = dy[0] / *count as f32;
                    if let Some(g) = buf(nodes, &mut grads, *logits) {
                        for (r, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            let row = &mut g[r * vocab..(r + 1) * vocab];
                            let p = &probs[r * vocab..(r + 1) * vocab];
                            for c in 0..vocab {
                                row[c] += s * p[c];
                            }
                            row[t] -= s;
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(g) = buf(nodes, &mut grads, *x) {
                        g.iter_mut().for_each(|g| *g += dy[0]);
                    }
                }
            }
        }

        for (g, n) in grads.iter_mut().zip(nodes) {
            if !matches!(n.op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn grad_slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f32>>], v: Var) -> Option<&'a mut Vec<f32>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

/// In-place numerically stable softmax of one slice. Masked entries become 0.
pub(crate) fn softmax_in_place(xs: &mut [f32], keep: Option<&[bool]>) {
    let kept = |i: usize| keep.is_none_or(|k| k[i]);
    let max = xs
        .iter()
        .enumerate()
        .filter(|(i, _)| kept(*i))
        .map(|(_, &v)| v)
        .fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (i, v) in xs.iter_mut().enumerate() {
        *v = if kept(i) { (*v - max).exp() } else { 0.0 };
        sum += *v;
    }
    let inv = 1.0 / sum;
    xs.iter_mut().for_each(|v| *v *= inv);
}
