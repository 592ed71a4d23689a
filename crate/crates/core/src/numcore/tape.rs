//! Eager reverse-mode differentiation over dense matrices.
//!
//! Every operation computes its value when it is recorded, so building an
//! expression is the same as evaluating it. [`Tape::backward`] walks the
//! recorded nodes in reverse and accumulates `∂root/∂param` into the
//! gradient buffers of the bound [`ParamSet`]. Accumulators are only cleared
//! by [`ParamSet::optimize_step`] or [`ParamSet::zero_grad`], so several
//! backward passes sum their contributions.

use std::sync::Arc;

use super::tensor::gemm;
use super::{NumError, ParamId, ParamSet, SparseMatrix, Tensor2};

/// Handle to a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSigmoid(Var),
    L2Normalize(Var),
    MeanRows(Var),
    RowSum(Var),
    ConcatCols(Vec<Var>),
    Scale(Var, f64),
    AddScalar(Var),
    Log(Var),
    Pow(Var, f64),
    Sum(Var),
    SelectRows(Var, Arc<Vec<usize>>),
    Transpose(Var),
    SparseMix(Arc<SparseMatrix>, Var),
    NeighborMax(Var, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "broadcast-add-row",
            Op::Mul(..) => "elementwise-mul",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "row-softmax",
            Op::LogSoftmax(_) => "row-log-softmax",
            Op::LogSigmoid(_) => "log-sigmoid",
            Op::L2Normalize(_) => "row-l2-normalize",
            Op::MeanRows(_) => "mean-rows",
            Op::RowSum(_) => "row-sum",
            Op::ConcatCols(_) => "concat-cols",
            Op::Scale(..) => "scalar-scale",
            Op::AddScalar(_) => "add-scalar",
            Op::Log(_) => "log",
            Op::Pow(..) => "pow",
            Op::Sum(_) => "sum",
            Op::SelectRows(..) => "masked-select-rows",
            Op::Transpose(_) => "transpose",
            Op::SparseMix(..) => "sparse-mix",
            Op::NeighborMax(..) => "neighbor-max",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor2,
    requires_grad: bool,
}

const NORM_FLOOR: f64 = 1e-12;

/// A computation graph recorded in evaluation order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node (already computed when it was recorded).
    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn evaluate(&self, v: Var) -> &Tensor2 {
        self.value(v)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a trainable parameter; gradients flow back into `params`.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: params.value(id).clone(),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor2, inputs: &[Var]) -> Result<Var, NumError> {
        let idx = self.nodes.len();
        if !value.is_finite() {
            return Err(NumError::NonFinite {
                node: idx,
                op: op.name(),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(idx))
    }

    fn mismatch(&self, op: &'static str, detail: String) -> NumError {
        NumError::ShapeMismatch {
            op,
            detail: format!("node #{}: {detail}", self.nodes.len()),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(self.mismatch("matmul", format!("{ar}x{ac} times {br}x{bc}")));
        }
        let mut out = Tensor2::zeros(ar, bc);
        gemm(self.value(a), false, self.value(b), false, &mut out, 0.0);
        self.push(Op::MatMul(a, b), out, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(Op::Add(a, b), out, &[a, b])
    }

    /// Adds a 1 x c row to every row of an n x c matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumError> {
        let (_, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(self.mismatch(
                "broadcast-add-row",
                format!("row {:?} for matrix {:?}", self.shape(row), self.shape(a)),
            ));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        self.push(Op::AddRow(a, row), out, &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape("elementwise-mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(Op::Mul(a, b), out, &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), out, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out, &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, NumError> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(Op::Softmax(a), out, &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumError> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(Op::LogSoftmax(a), out, &[a])
    }

    /// `ln σ(x)`, stable for large |x|.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(log_sigmoid);
        self.push(Op::LogSigmoid(a), out, &[a])
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > NORM_FLOOR {
                row.iter_mut().for_each(|x| *x /= norm);
            } else {
                row.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        self.push(Op::L2Normalize(a), out, &[a])
    }

    /// Column means over rows: n x c -> 1 x c.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumError> {
        if self.shape(a).0 == 0 {
            return Err(self.mismatch("mean-rows", "no rows".into()));
        }
        let out = self.value(a).column_means();
        self.push(Op::MeanRows(a), out, &[a])
    }

    /// Per-row sums: n x c -> n x 1.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, NumError> {
        let v = self.value(a);
        let sums: Vec<f64> = v.iter_rows().map(|r| r.iter().sum()).collect();
        let out = Tensor2::column_vector(&sums[..v.rows()]);
        self.push(Op::RowSum(a), out, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let tensors: Vec<&Tensor2> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor2::hconcat(&tensors).map_err(|e| self.mismatch("concat-cols", e.to_string()))?;
        self.push(Op::ConcatCols(parts.to_vec()), out, parts)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        let out = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), out, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        let out = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), out, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(f64::ln);
        self.push(Op::Log(a), out, &[a])
    }

    /// `x^p` for `p ≥ 1`; negative inputs (round-off below zero) are clamped to 0.
    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var, NumError> {
        let out = self.value(a).map(|x| x.max(0.0).powf(p));
        self.push(Op::Pow(a, p), out, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        let out = Tensor2::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumError> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(self.mismatch("mean", "empty tensor".into()));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Gathers rows by index; indices may repeat.
    pub fn select_rows(&mut self, a: Var, indices: Arc<Vec<usize>>) -> Result<Var, NumError> {
        let rows = self.shape(a).0;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(self.mismatch("masked-select-rows", format!("index {bad} of {rows} rows")));
        }
        let out = self.value(a).select_rows(&indices);
        self.push(Op::SelectRows(a, indices), out, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out, &[a])
    }

    /// Left-multiplies by a fixed sparse matrix.
    pub fn sparse_mix(&mut self, m: Arc<SparseMatrix>, a: Var) -> Result<Var, NumError> {
        let out = m
            .mul_dense(self.value(a))
            .map_err(|e| self.mismatch("sparse-mix", e.to_string()))?;
        self.push(Op::SparseMix(m, a), out, &[a])
    }

    /// Per-column maximum over each node's neighbor rows; rows with no
    /// neighbors become zero.
    pub fn neighbor_max(&mut self, neighbors: &[Vec<usize>], a: Var) -> Result<Var, NumError> {
        let x = self.value(a);
        if neighbors.len() != x.rows() {
            return Err(self.mismatch(
                "neighbor-max",
                format!("{} neighbor lists for {} rows", neighbors.len(), x.rows()),
            ));
        }
        let cols = x.cols();
        let mut out = Tensor2::zeros(x.rows(), cols);
        let mut argmax = vec![usize::MAX; x.rows() * cols];
        for (i, nbrs) in neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            for c in 0..cols {
                let mut best = nbrs[0];
                for &j in &nbrs[1..] {
                    if x.get(j, c) > x.get(best, c) {
                        best = j;
                    }
                }
                out.set(i, c, x.get(best, c));
                argmax[i * cols + c] = best;
            }
        }
        self.push(Op::NeighborMax(a, argmax), out, &[a])
    }

    /// Reverse pass from a 1x1 root, accumulating into `params`.
    pub fn backward(&self, root: Var, params: &mut ParamSet) -> Result<(), NumError> {
        if self.shape(root) != (1, 1) {
            return Err(NumError::NonScalarRoot(self.shape(root)));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor2::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, params);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor2, grads: &mut [Option<Tensor2>], params: &mut ParamSet) {
        let y = &node.value;
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => params.accumulate_grad(*id, g),
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let buf = slot(grads, *a, self.shape(*a));
                    gemm(g, false, self.value(*b), true, buf, 1.0);
                }
                if self.wants(*b) {
                    let buf = slot(grads, *b, self.shape(*b));
                    gemm(self.value(*a), true, g, false, buf, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        slot(grads, *v, g.shape()).add_scaled(g, 1.0);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    slot(grads, *a, g.shape()).add_scaled(g, 1.0);
                }
                if self.wants(*row) {
                    let buf = slot(grads, *row, (1, g.cols()));
                    for r in g.iter_rows() {
                        for (d, &s) in buf.as_mut_slice().iter_mut().zip(r) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let other = self.value(*b);
                    elementwise_acc(slot(grads, *a, g.shape()), g, other, |gi, o| gi * o);
                }
                if self.wants(*b) {
                    let other = self.value(*a);
                    elementwise_acc(slot(grads, *b, g.shape()), g, other, |gi, o| gi * o);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                elementwise_acc(slot(grads, *a, g.shape()), g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
            }
            Op::Sigmoid(a) => {
                elementwise_acc(slot(grads, *a, g.shape()), g, y, |gi, s| gi * s * (1.0 - s));
            }
            Op::Tanh(a) => {
                elementwise_acc(slot(grads, *a, g.shape()), g, y, |gi, t| gi * (1.0 - t * t));
            }
            Op::Softmax(a) => {
                let buf = slot(grads, *a, g.shape());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, &gi), &yi) in buf.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *d += yi * (gi - dot);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let buf = slot(grads, *a, g.shape());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let total: f64 = gr.iter().sum();
                    for ((d, &gi), &yi) in buf.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *d += gi - yi.exp() * total;
                    }
                }
            }
            Op::LogSigmoid(a) => {
                let x = self.value(*a);
                elementwise_acc(slot(grads, *a, g.shape()), g, x, |gi, xi| gi * sigmoid(-xi));
            }
            Op::L2Normalize(a) => {
                let x = self.value(*a);
                let buf = slot(grads, *a, g.shape());
                for r in 0..g.rows() {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm <= NORM_FLOOR {
                        continue;
                    }
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, &gi), &yi) in buf.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *d += (gi - yi * dot) / norm;
                    }
                }
            }
            Op::MeanRows(a) => {
                let (n, _) = self.shape(*a);
                let buf = slot(grads, *a, (n, g.cols()));
                let inv = 1.0 / n as f64;
                for r in 0..n {
                    for (d, &gi) in buf.row_mut(r).iter_mut().zip(g.as_slice()) {
                        *d += gi * inv;
                    }
                }
            }
            Op::RowSum(a) => {
                let buf = slot(grads, *a, self.shape(*a));
                for r in 0..g.rows() {
                    let gi = g.get(r, 0);
                    buf.row_mut(r).iter_mut().for_each(|d| *d += gi);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.shape(*p);
                    if self.wants(*p) {
                        let buf = slot(grads, *p, (rows, cols));
                        for r in 0..rows {
                            for (d, &gi) in buf.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + cols]) {
                                *d += gi;
                            }
                        }
                    }
                    offset += cols;
                }
            }
            Op::Scale(a, c) => {
                slot(grads, *a, g.shape()).add_scaled(g, *c);
            }
            Op::AddScalar(a) => {
                slot(grads, *a, g.shape()).add_scaled(g, 1.0);
            }
            Op::Log(a) => {
                let x = self.value(*a);
                elementwise_acc(slot(grads, *a, g.shape()), g, x, |gi, xi| gi / xi);
            }
            Op::Pow(a, p) => {
                let x = self.value(*a);
                let p = *p;
                elementwise_acc(slot(grads, *a, g.shape()), g, x, |gi, xi| {
                    let xi = xi.max(0.0);
                    if p == 1.0 {
                        gi
                    } else {
                        gi * p * xi.powf(p - 1.0)
                    }
                });
            }
            Op::Sum(a) => {
                let gi = g.get(0, 0);
                let buf = slot(grads, *a, self.shape(*a));
                buf.as_mut_slice().iter_mut().for_each(|d| *d += gi);
            }
            Op::SelectRows(a, indices) => {
                let buf = slot(grads, *a, self.shape(*a));
                for (r, &src) in indices.iter().enumerate() {
                    for (d, &gi) in buf.row_mut(src).iter_mut().zip(g.row(r)) {
                        *d += gi;
                    }
                }
            }
            Op::Transpose(a) => {
                slot(grads, *a, self.shape(*a)).add_scaled(&g.transpose(), 1.0);
            }
            Op::SparseMix(m, a) => {
                m.accumulate_transpose_mul(g, slot(grads, *a, self.shape(*a)));
            }
            Op::NeighborMax(a, argmax) => {
                let cols = g.cols();
                let buf = slot(grads, *a, self.shape(*a));
                for (k, &src) in argmax.iter().enumerate() {
                    if src != usize::MAX {
                        let (r, c) = (k / cols, k % cols);
                        let cur = buf.get(src, c);
                        buf.set(src, c, cur + g.get(r, c));
                    }
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor2>], v: Var, shape: (usize, usize)) -> &'a mut Tensor2 {
    grads[v.0].get_or_insert_with(|| Tensor2::zeros(shape.0, shape.1))
}

fn elementwise_acc(buf: &mut Tensor2, g: &Tensor2, other: &Tensor2, f: impl Fn(f64, f64) -> f64) {
    for ((d, &gi), &o) in buf.as_mut_slice().iter_mut().zip(g.as_slice()).zip(other.as_slice()) {
        *d += f(gi, o);
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Numerically stable softmax with max subtraction.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}
