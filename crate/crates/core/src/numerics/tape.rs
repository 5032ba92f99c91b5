//! Recording tape for reverse-mode differentiation over dense 2-D arrays.
//!
//! A [`Tape`] owns an arena of nodes. Forward methods append a node holding
//! the output values plus enough bookkeeping to invert the op;
//! [`Tape::backward`] walks the arena in reverse and accumulates gradients.
//! Node inputs always precede their output, so a single reverse sweep is a
//! valid topological order.
//!
//! A tape and its tensors belong to one worker at a time; distinct workers
//! own distinct tapes.

use alloc::vec;
use alloc::vec::Vec;

use super::fmath;
use super::rng::{self, SeedRng};
use super::NumericsError;

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(pub(crate) usize);

/// Owned tensor snapshot, detached from any tape.
///
/// `grad` is populated by [`Tape::export`] after a backward pass when the
/// tensor required gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "values must fill rows x cols");
        Tensor {
            rows,
            cols,
            values,
            requires_grad: true,
            grad: None,
        }
    }

    pub fn constant(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        let mut t = Self::new(rows, cols, values);
        t.requires_grad = false;
        t
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

enum Op {
    Leaf,
    Matmul(usize, usize),
    /// Same shape, or rhs a broadcast `[1, n]` row.
    Add(usize, usize),
    Scale(usize, f64),
    /// Same shape, or rhs a broadcast `[m, 1]` column / `[1, n]` row.
    Mul(usize, usize),
    Transpose(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    MeanRows(usize),
    Sum(usize),
    RowSlice { src: usize, start: usize },
    SoftmaxRows(usize),
    LayerNorm { x: usize, gain: usize, bias: usize },
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    /// Mask entries are `0` or `1/keep`; identity dropout records no node.
    Dropout { src: usize, mask: Vec<f64> },
    Gather { table: usize, indices: Vec<usize> },
}

struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Dropout behavior for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

pub struct Tape {
    nodes: Vec<Node>,
    rng: SeedRng,
    /// Set by the gradient checker: dropout behaves as identity regardless
    /// of the per-op mode.
    force_eval_dropout: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_seed(0)
    }

    /// Tape whose internal randomness (dropout masks) derives from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            rng: rng::seeded(seed),
            force_eval_dropout: false,
        }
    }

    pub fn set_force_eval_dropout(&mut self, on: bool) {
        self.force_eval_dropout = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, t: TensorRef) -> (usize, usize) {
        let n = &self.nodes[t.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, t: TensorRef) -> &[f64] {
        &self.nodes[t.0].values
    }

    pub fn requires_grad(&self, t: TensorRef) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Gradient accumulated by the latest backward pass; `None` before any
    /// backward or for non-differentiable nodes.
    pub fn grad(&self, t: TensorRef) -> Option<&[f64]> {
        let n = &self.nodes[t.0];
        if n.grad.is_empty() {
            None
        } else {
            Some(&n.grad)
        }
    }

    /// Detaches a node into an owned [`Tensor`], including its gradient
    /// when one has been computed.
    pub fn export(&self, t: TensorRef) -> Tensor {
        let n = &self.nodes[t.0];
        Tensor {
            rows: n.rows,
            cols: n.cols,
            values: n.values.clone(),
            requires_grad: n.requires_grad,
            grad: self.grad(t).map(<[f64]>::to_vec),
        }
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, requires_grad: bool, op: Op) -> TensorRef {
        debug_assert_eq!(values.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            values,
            grad: Vec::new(),
            requires_grad,
            op,
        });
        TensorRef(self.nodes.len() - 1)
    }

    fn needs(&self, t: TensorRef) -> bool {
        self.nodes[t.0].requires_grad
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<f64>, requires_grad: bool) -> Result<TensorRef, NumericsError> {
        if values.len() != rows * cols {
            return Err(NumericsError::InvalidInput {
                op: "leaf",
                msg: alloc::format!("{} values for a {rows}x{cols} tensor", values.len()),
            });
        }
        Ok(self.push(rows, cols, values, requires_grad, Op::Leaf))
    }

    pub fn leaf_from(&mut self, t: &Tensor) -> Result<TensorRef, NumericsError> {
        self.leaf(t.rows, t.cols, t.values.clone(), t.requires_grad)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<TensorRef, NumericsError> {
        self.leaf(rows, cols, values, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Result<TensorRef, NumericsError> {
        self.leaf(rows, cols, vec![0.0; rows * cols], false)
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, NumericsError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(NumericsError::ShapeMismatch { op: "matmul", lhs: (m, k), rhs: (k2, n) });
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(&mut out, &self.nodes[a.0].values, &self.nodes[b.0].values, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, rg, Op::Matmul(a.0, b.0)))
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, NumericsError> {
        let (m, n) = self.shape(a);
        let (bm, bn) = self.shape(b);
        let row_broadcast = bm == 1 && bn == n && m != 1;
        if !(row_broadcast || (bm == m && bn == n)) {
            return Err(NumericsError::ShapeMismatch { op: "add", lhs: (m, n), rhs: (bm, bn) });
        }
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = Vec::with_capacity(m * n);
        if row_broadcast {
            for i in 0..m {
                for j in 0..n {
                    out.push(av[i * n + j] + bv[j]);
                }
            }
        } else {
            out.extend(av.iter().zip(bv.iter()).map(|(x, y)| x + y));
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, rg, Op::Add(a.0, b.0)))
    }

    pub fn scale(&mut self, a: TensorRef, c: f64) -> Result<TensorRef, NumericsError> {
        let (m, n) = self.shape(a);
        let out = self.nodes[a.0].values.iter().map(|x| c * x).collect();
        let rg = self.needs(a);
        Ok(self.push(m, n, out, rg, Op::Scale(a.0, c)))
    }

    /// Elementwise product. `b` may be a `[m, 1]` column (scales each row of
    /// `a` by a scalar) or a `[1, n]` row (scales each column).
    pub fn elementwise_mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, NumericsError> {
        let (m, n) = self.shape(a);
        let (bm, bn) = self.shape(b);
        let same = bm == m && bn == n;
        let col_broadcast = !same && bm == m && bn == 1;
        let row_broadcast = !same && bm == 1 && bn == n;
        if !(same || col_broadcast || row_broadcast) {
            return Err(NumericsError::ShapeMismatch { op: "elementwise_mul", lhs: (m, n), rhs: (bm, bn) });
        }
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = Vec::with_capacity(m * n);
        if same {
            out.extend(av.iter().zip(bv.iter()).map(|(x, y)| x * y));
        } else if col_broadcast {
            for i in 0..m {
                let s = bv[i];
                out.extend(av[i * n..(i + 1) * n].iter().map(|x| x * s));
            }
        } else {
            for i in 0..m {
                for j in 0..n {
                    out.push(av[i * n + j] * bv[j]);
                }
            }
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, rg, Op::Mul(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: TensorRef) -> Result<TensorRef, NumericsError> {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.needs(a);
        Ok(self.push(n, m, out, rg, Op::Transpose(a.0)))
    }

    /// Stacks blocks vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[TensorRef]) -> Result<TensorRef, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::InvalidInput { op: "concat_rows", msg: "no inputs".into() });
        }
        let (_, n) = self.shape(parts[0]);
        let mut rows = 0;
        let mut out = Vec::new();
        let mut rg = false;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pn != n {
                return Err(NumericsError::ShapeMismatch { op: "concat_rows", lhs: (rows, n), rhs: (pm, pn) });
            }
            rows += pm;
            out.extend_from_slice(&self.nodes[p.0].values);
            rg |= self.needs(p);
        }
        Ok(self.push(rows, n, out, rg, Op::ConcatRows(parts.iter().map(|p| p.0).collect())))
    }

    /// Stacks blocks horizontally; all must share a row count.
    pub fn concat_cols(&mut self, parts: &[TensorRef]) -> Result<TensorRef, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::InvalidInput { op: "concat_cols", msg: "no inputs".into() });
        }
        let (m, _) = self.shape(parts[0]);
        let mut cols = 0;
        let mut rg = false;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pm != m {
                return Err(NumericsError::ShapeMismatch { op: "concat_cols", lhs: (m, cols), rhs: (pm, pn) });
            }
            cols += pn;
            rg |= self.needs(p);
        }
        let mut out = Vec::with_capacity(m * cols);
        for i in 0..m {
            for &p in parts {
                let (_, pn) = self.shape(p);
                let v = &self.nodes[p.0].values;
                out.extend_from_slice(&v[i * pn..(i + 1) * pn]);
            }
        }
        Ok(self.push(m, cols, out, rg, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    /// Column-wise mean: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: TensorRef) -> Result<TensorRef, NumericsError> {
        let (m, n) = self.shape(a);
        if m == 0 {
            return Err(NumericsError::InvalidInput { op: "mean_rows", msg: "empty input".into() });
        }
        let av = &self.nodes[a.0].values;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += av[i * n + j];
            }
        }
        let inv = 1.0 / m as f64;
        for v in &mut out {
            *v *= inv;
        }
        let rg = self.needs(a);
        Ok(self.push(1, n, out, rg, Op::MeanRows(a.0)))
    }

    /// Sum of all entries: `-> [1, 1]`.
    pub fn sum(&mut self, a: TensorRef) -> Result<TensorRef, NumericsError> {
        let total: f64 = self.nodes[a.0].values.iter().sum();
        let rg = self.needs(a);
        Ok(self.push(1, 1, vec![total], rg, Op::Sum(a.0)))
    }

    /// Rows `[start, end)` of `a`.
    pub fn row_slice(&mut self, a: TensorRef, start: usize, end: usize) -> Result<TensorRef, NumericsError> {
        let (m, n) = self.shape(a);
        if start >= end || end > m {
            return Err(NumericsError::InvalidInput {
                op: "row_slice",
                msg: alloc::format!("rows [{start}, {end}) out of bounds for {m} rows"),
            });
        }
        let out = self.nodes[a.0].values[start * n..end * n].to_vec();
        let rg = self.needs(a);
        Ok(self.push(end - start, n, out, rg, Op::RowSlice { src: a.0, start }))
    }

    /// Numerically stable per-row softmax.
    pub fn softmax_rows(&mut self, a: TensorRef) -> Result<TensorRef, NumericsError> {
        let (m, n) = self.shape(a);
        if n == 0 {
            return Err(NumericsError::InvalidInput { op: "softmax_rows", msg: "zero columns".into() });
        }
        let av = &self.nodes[a.0].values;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &x in row {
                denom += fmath::exp(x - max);
            }
            for &x in row {
                out.push(fmath::exp(x - max) / denom);
            }
        }
        let rg = self.needs(a);
        Ok(self.push(m, n, out, rg, Op::SoftmaxRows(a.0)))
    }

    /// Per-row layer normalization with learnable `[1, n]` gain and bias.
    ///
    /// `y = (x - mean) / sqrt(var + 1e-12) * gain + bias`; a constant row
    /// normalizes to zero (then bias).
    pub fn layer_norm_rows(&mut self, x: TensorRef, gain: TensorRef, bias: TensorRef) -> Result<TensorRef, NumericsError> {
        let (m, n) = self.shape(x);
        for (name, t) in [("gain", gain), ("bias", bias)] {
            let s = self.shape(t);
            if s != (1, n) {
                return Err(NumericsError::InvalidInput {
                    op: "layer_norm_rows",
                    msg: alloc::format!("{name} must be 1x{n}, got {}x{}", s.0, s.1),
                });
            }
        }
        let xv = &self.nodes[x.0].values;
        let gv = &self.nodes[gain.0].values;
        let bv = &self.nodes[bias.0].values;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let (mean, inv_std) = layer_norm_stats(row);
            for j in 0..n {
                out.push((row[j] - mean) * inv_std * gv[j] + bv[j]);
            }
        }
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(m, n, out, rg, Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0 }))
    }

    pub fn relu(&mut self, a: TensorRef) -> Result<TensorRef, NumericsError> {
        self.unary(a, Op::Relu(a.0), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn gelu(&mut self, a: TensorRef) -> Result<TensorRef, NumericsError> {
        self.unary(a, Op::Gelu(a.0), fmath::gelu)
    }

    pub fn sigmoid(&mut self, a: TensorRef) -> Result<TensorRef, NumericsError> {
        self.unary(a, Op::Sigmoid(a.0), fmath::sigmoid)
    }

    pub fn exp(&mut self, a: TensorRef) -> Result<TensorRef, NumericsError> {
        self.unary(a, Op::Exp(a.0), fmath::exp)
    }

    pub fn log(&mut self, a: TensorRef) -> Result<TensorRef, NumericsError> {
        if let Some(pos) = self.nodes[a.0].values.iter().position(|&x| x <= 0.0) {
            return Err(NumericsError::InvalidInput {
                op: "log",
                msg: alloc::format!("non-positive input at coordinate {pos}"),
            });
        }
        self.unary(a, Op::Log(a.0), fmath::ln)
    }

    fn unary(&mut self, a: TensorRef, op: Op, f: impl Fn(f64) -> f64) -> Result<TensorRef, NumericsError> {
        let (m, n) = self.shape(a);
        let out = self.nodes[a.0].values.iter().map(|&x| f(x)).collect();
        let rg = self.needs(a);
        Ok(self.push(m, n, out, rg, op))
    }

    /// Inverted dropout. In train mode each entry is kept with probability
    /// `keep` and scaled by `1/keep`; in eval mode (or under the gradient
    /// checker) the input tensor is returned unchanged.
    pub fn dropout(&mut self, a: TensorRef, keep: f64, mode: DropoutMode) -> Result<TensorRef, NumericsError> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(NumericsError::InvalidInput {
                op: "dropout",
                msg: alloc::format!("keep probability {keep} outside (0, 1]"),
            });
        }
        if mode == DropoutMode::Eval || self.force_eval_dropout {
            return Ok(a);
        }
        let (m, n) = self.shape(a);
        let inv = 1.0 / keep;
        let mask: Vec<f64> = (0..m * n)
            .map(|_| if rng::next_f64(&mut self.rng) < keep { inv } else { 0.0 })
            .collect();
        let av = &self.nodes[a.0].values;
        let out = av.iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
        let rg = self.needs(a);
        Ok(self.push(m, n, out, rg, Op::Dropout { src: a.0, mask }))
    }

    /// Gathers `table` rows by index; backward scatter-adds into the table.
    pub fn embedding_gather(&mut self, table: TensorRef, indices: &[usize]) -> Result<TensorRef, NumericsError> {
        let (rows, d) = self.shape(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::InvalidInput {
                op: "embedding_gather",
                msg: alloc::format!("index {bad} out of range for {rows} rows"),
            });
        }
        if indices.is_empty() {
            return Err(NumericsError::InvalidInput { op: "embedding_gather", msg: "no indices".into() });
        }
        let tv = &self.nodes[table.0].values;
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.needs(table);
        Ok(self.push(indices.len(), d, out, rg, Op::Gather { table: table.0, indices: indices.to_vec() }))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Backpropagates from a scalar (`1x1`) output. Every `requires_grad`
    /// node reachable from `out` receives its exact gradient; unused
    /// `requires_grad` leaves keep an all-zero gradient.
    pub fn backward(&mut self, out: TensorRef) -> Result<(), NumericsError> {
        let (m, n) = self.shape(out);
        if (m, n) != (1, 1) {
            return Err(NumericsError::InvalidInput {
                op: "backward",
                msg: alloc::format!("output must be scalar, got {m}x{n}"),
            });
        }
        for node in &mut self.nodes {
            node.grad.clear();
            if node.requires_grad {
                node.grad.resize(node.rows * node.cols, 0.0);
            }
        }
        if !self.nodes[out.0].requires_grad {
            // Constant-only graph: nothing to propagate.
            return Ok(());
        }
        self.nodes[out.0].grad[0] = 1.0;

        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            let g = &node.grad;
            let rows = node.rows;
            let cols = node.cols;
            match &node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let k = before[a].cols;
                    if before[a].requires_grad {
                        let (bvals, agrad) = vals_and_grad(before, b, a);
                        // dA += dC * B^T
                        matmul_nt_acc(agrad, g, bvals, rows, cols, k);
                    }
                    if before[b].requires_grad {
                        let (avals, bgrad) = vals_and_grad(before, a, b);
                        // dB += A^T * dC
                        matmul_tn_acc(bgrad, avals, g, rows, k, cols);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if before[a].requires_grad {
                        acc(&mut before[a].grad, g);
                    }
                    if before[b].requires_grad {
                        if before[b].rows == 1 && rows != 1 {
                            let gb = &mut before[b].grad;
                            for i in 0..rows {
                                for j in 0..cols {
                                    gb[j] += g[i * cols + j];
                                }
                            }
                        } else {
                            acc(&mut before[b].grad, g);
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if before[*a].requires_grad {
                        let c = *c;
                        for (ga, &go) in before[*a].grad.iter_mut().zip(g.iter()) {
                            *ga += c * go;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (bm, bn) = (before[b].rows, before[b].cols);
                    let same = bm == rows && bn == cols;
                    if before[a].requires_grad {
                        let (bv, ga) = vals_and_grad(before, b, a);
                        if same {
                            for i in 0..rows * cols {
                                ga[i] += g[i] * bv[i];
                            }
                        } else if bn == 1 {
                            for i in 0..rows {
                                let s = bv[i];
                                for j in 0..cols {
                                    ga[i * cols + j] += g[i * cols + j] * s;
                                }
                            }
                        } else {
                            for i in 0..rows {
                                for j in 0..cols {
                                    ga[i * cols + j] += g[i * cols + j] * bv[j];
                                }
                            }
                        }
                    }
                    if before[b].requires_grad {
                        let (av, gb) = vals_and_grad(before, a, b);
                        if same {
                            for i in 0..rows * cols {
                                gb[i] += g[i] * av[i];
                            }
                        } else if bn == 1 {
                            for i in 0..rows {
                                let mut s = 0.0;
                                for j in 0..cols {
                                    s += g[i * cols + j] * av[i * cols + j];
                                }
                                gb[i] += s;
                            }
                        } else {
                            for i in 0..rows {
                                for j in 0..cols {
                                    gb[j] += g[i * cols + j] * av[i * cols + j];
                                }
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    if before[*a].requires_grad {
                        let an = before[*a].cols;
                        let ga = &mut before[*a].grad;
                        for i in 0..rows {
                            for j in 0..cols {
                                ga[j * an + i] += g[i * cols + j];
                            }
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let pm = before[p].rows;
                        if before[p].requires_grad {
                            acc(&mut before[p].grad, &g[row * cols..(row + pm) * cols]);
                        }
                        row += pm;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let pn = before[p].cols;
                        if before[p].requires_grad {
                            let gp = &mut before[p].grad;
                            for i in 0..rows {
                                for j in 0..pn {
                                    gp[i * pn + j] += g[i * cols + col + j];
                                }
                            }
                        }
                        col += pn;
                    }
                }
                Op::MeanRows(a) => {
                    if before[*a].requires_grad {
                        let am = before[*a].rows;
                        let inv = 1.0 / am as f64;
                        let ga = &mut before[*a].grad;
                        for i in 0..am {
                            for j in 0..cols {
                                ga[i * cols + j] += g[j] * inv;
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    if before[*a].requires_grad {
                        let go = g[0];
                        for ga in before[*a].grad.iter_mut() {
                            *ga += go;
                        }
                    }
                }
                Op::RowSlice { src, start } => {
                    if before[*src].requires_grad {
                        let start = *start;
                        acc(&mut before[*src].grad[start * cols..(start + rows) * cols], g);
                    }
                }
                Op::SoftmaxRows(a) => {
                    if before[*a].requires_grad {
                        let y = &node.values;
                        let ga = &mut before[*a].grad;
                        for i in 0..rows {
                            let yr = &y[i * cols..(i + 1) * cols];
                            let gr = &g[i * cols..(i + 1) * cols];
                            let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                            for j in 0..cols {
                                ga[i * cols + j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let n = cols;
                    let xvals = before[x].values.clone();
                    let gvals = before[gain].values.clone();
                    let mut dx = vec![0.0; rows * n];
                    let mut dgain = vec![0.0; n];
                    let mut dbias = vec![0.0; n];
                    let mut dxhat = vec![0.0; n];
                    for i in 0..rows {
                        let gr = &g[i * n..(i + 1) * n];
                        let xrow = &xvals[i * n..(i + 1) * n];
                        let (mean, inv_std) = layer_norm_stats(xrow);
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..n {
                            let xhat = (xrow[j] - mean) * inv_std;
                            dxhat[j] = gr[j] * gvals[j];
                            sum_dxhat += dxhat[j];
                            sum_dxhat_xhat += dxhat[j] * xhat;
                            dgain[j] += gr[j] * xhat;
                            dbias[j] += gr[j];
                        }
                        let inv_n = 1.0 / n as f64;
                        for j in 0..n {
                            let xhat = (xrow[j] - mean) * inv_std;
                            dx[i * n + j] =
                                inv_std * (dxhat[j] - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                        }
                    }
                    if before[x].requires_grad {
                        acc(&mut before[x].grad, &dx);
                    }
                    if before[gain].requires_grad {
                        acc(&mut before[gain].grad, &dgain);
                    }
                    if before[bias].requires_grad {
                        acc(&mut before[bias].grad, &dbias);
                    }
                }
                Op::Relu(a) => {
                    if before[*a].requires_grad {
                        let (av, ga) = vals_and_grad(before, *a, *a);
                        for i in 0..rows * cols {
                            if av[i] > 0.0 {
                                ga[i] += g[i];
                            }
                        }
                    }
                }
                Op::Gelu(a) => {
                    if before[*a].requires_grad {
                        let (av, ga) = vals_and_grad(before, *a, *a);
                        for i in 0..rows * cols {
                            ga[i] += g[i] * fmath::gelu_grad(av[i]);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if before[*a].requires_grad {
                        let y = &node.values;
                        let ga = &mut before[*a].grad;
                        for i in 0..rows * cols {
                            ga[i] += g[i] * y[i] * (1.0 - y[i]);
                        }
                    }
                }
                Op::Exp(a) => {
                    if before[*a].requires_grad {
                        let y = &node.values;
                        let ga = &mut before[*a].grad;
                        for i in 0..rows * cols {
                            ga[i] += g[i] * y[i];
                        }
                    }
                }
                Op::Log(a) => {
                    if before[*a].requires_grad {
                        let (av, ga) = vals_and_grad(before, *a, *a);
                        for i in 0..rows * cols {
                            ga[i] += g[i] / av[i];
                        }
                    }
                }
                Op::Dropout { src, mask } => {
                    if before[*src].requires_grad {
                        let ga = &mut before[*src].grad;
                        for i in 0..rows * cols {
                            ga[i] += g[i] * mask[i];
                        }
                    }
                }
                Op::Gather { table, indices } => {
                    if before[*table].requires_grad {
                        let d = cols;
                        let gt = &mut before[*table].grad;
                        for (r, &idx) in indices.iter().enumerate() {
                            for j in 0..d {
                                gt[idx * d + j] += g[r * d + j];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Values of `read` and mutable gradient of `write`, even when they are the
/// same node (disjoint fields).
fn vals_and_grad(nodes: &mut [Node], read: usize, write: usize) -> (&[f64], &mut [f64]) {
    if read == write {
        let node = &mut nodes[read];
        (&node.values, &mut node.grad)
    } else if read < write {
        let (lo, hi) = nodes.split_at_mut(write);
        (&lo[read].values, &mut hi[0].grad)
    } else {
        let (lo, hi) = nodes.split_at_mut(read);
        (&hi[0].values, &mut lo[write].grad)
    }
}

fn layer_norm_stats(row: &[f64]) -> (f64, f64) {
    const EPS: f64 = 1e-12;
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / fmath::sqrt(var + EPS))
}

#[inline]
fn acc(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src.iter()) {
        *d += s;
    }
}

/// `dst += a * b`, `a: [m,k]`, `b: [k,n]` (row-major, ikj order).
fn matmul_acc(dst: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let drow = &mut dst[i * n..(i + 1) * n];
        for (l, &ail) in arow.iter().enumerate() {
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (dv, &bv) in drow.iter_mut().zip(brow.iter()) {
                *dv += ail * bv;
            }
        }
    }
}

/// `dst += a * b^T`, `a: [m,n]`, `b: [k,n]`, `dst: [m,k]`.
fn matmul_nt_acc(dst: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let drow = &mut dst[i * k..(i + 1) * k];
        for l in 0..k {
            let brow = &b[l * n..(l + 1) * n];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow.iter()) {
                s += x * y;
            }
            drow[l] += s;
        }
    }
}

/// `dst += a^T * b`, `a: [m,k]`, `b: [m,n]`, `dst: [k,n]`.
fn matmul_tn_acc(dst: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (l, &ail) in arow.iter().enumerate() {
            if ail == 0.0 {
                continue;
            }
            let drow = &mut dst[l * n..(l + 1) * n];
            for (dv, &bv) in drow.iter_mut().zip(brow.iter()) {
                *dv += ail * bv;
            }
        }
    }
}
