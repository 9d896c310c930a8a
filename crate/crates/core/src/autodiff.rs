//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation eagerly: values are computed when an
//! op is pushed, and [`Tape::backward`] replays the record in reverse to
//! accumulate gradients of a scalar loss. Nodes that do not depend on any
//! parameter are never differentiated.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fixed sparse linear operator (CSR), e.g. a normalized adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOp {
    /// Builds from per-row `(col, weight)` lists.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in &rows {
            for &(c, w) in r {
                debug_assert!(c < cols);
                col_idx.push(c);
                vals.push(w);
            }
            row_ptr.push(col_idx.len());
        }
        Self { rows: rows.len(), cols, row_ptr, col_idx, vals }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn apply(&self, h: &Matrix) -> Result<Matrix> {
        if h.rows() != self.cols {
            return Err(Error::Dimension(format!(
                "sparse operator {}x{} applied to {} rows",
                self.rows,
                self.cols,
                h.rows()
            )));
        }
        let mut out = Matrix::zeros(self.rows, h.cols());
        for r in 0..self.rows {
            let out_row = out.row_mut(r);
            for (c, w) in self.row_entries(r) {
                for (o, &x) in out_row.iter_mut().zip(h.row(c)) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }

    fn apply_transpose(&self, g: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.cols, g.cols());
        for r in 0..self.rows {
            let g_row = g.row(r);
            for (c, w) in self.row_entries(r) {
                for (o, &x) in out.row_mut(c).iter_mut().zip(g_row) {
                    *o += w * x;
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Elu(Var),
    Abs(Var),
    Recip(Var),
    Clamp(Var, f64, f64),
    Ln(Var, f64),
    Softmax(Var),
    Standardize(Var, Vec<f64>),
    Sparse(Var, Arc<SparseOp>),
    PairCosine(Var, Arc<Vec<(usize, usize)>>),
    GatherRows(Var, Arc<Vec<usize>>),
    Sum(Var),
    Mean(Var),
    CrossEntropy(Var, Arc<Vec<usize>>),
    SoftCrossEntropy(Var, Var),
    BceWithLogits(Var, Arc<Vec<f64>>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// A differentiable leaf.
    pub fn param(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, value: Matrix, op: Op) -> Var {
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Matrix, op: Op) -> Var {
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.binary(a, b, value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.binary(a, b, value, Op::Sub(a, b)))
    }

    /// Adds a `1 x cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != m.cols() {
            return Err(Error::Dimension(format!(
                "row broadcast of {}x{} onto {}x{}",
                r.rows(),
                r.cols(),
                m.rows(),
                m.cols()
            )));
        }
        let mut value = m.clone();
        for i in 0..value.rows() {
            for (o, &b) in value.row_mut(i).iter_mut().zip(r.as_slice()) {
                *o += b;
            }
        }
        Ok(self.binary(a, row, value, Op::AddRow(a, row)))
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.unary(x, value, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(elu);
        self.unary(x, value, Op::Elu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        self.unary(x, value, Op::Abs(x))
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(f64::recip);
        if !value.is_finite() {
            return Err(Error::Numeric("reciprocal of zero".into()));
        }
        Ok(self.unary(x, value, Op::Recip(x)))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        self.unary(x, value, Op::Clamp(x, lo, hi))
    }

    /// Natural log of `max(x, floor)`; entries at or below the floor get no gradient.
    pub fn ln_clamped(&mut self, x: Var, floor: f64) -> Var {
        let value = self.value(x).map(|v| v.max(floor).ln());
        self.unary(x, value, Op::Ln(x, floor))
    }

    pub fn row_softmax(&mut self, z: Var) -> Var {
        let value = row_softmax(self.value(z));
        self.unary(z, value, Op::Softmax(z))
    }

    /// Per-row standardization `(x - mean) / std` with the unbiased (n-1) std.
    pub fn row_standardize(&mut self, x: Var) -> Result<Var> {
        let (value, sigmas) = row_standardize(self.value(x))?;
        Ok(self.unary(x, value, Op::Standardize(x, sigmas)))
    }

    pub fn sparse(&mut self, op: Arc<SparseOp>, h: Var) -> Result<Var> {
        let value = op.apply(self.value(h))?;
        Ok(self.unary(h, value, Op::Sparse(h, op)))
    }

    /// Cosine similarity between row pairs, as an `n_pairs x 1` column.
    /// Every referenced row must have non-zero norm.
    pub fn pair_cosine(&mut self, x: Var, pairs: Arc<Vec<(usize, usize)>>) -> Result<Var> {
        let m = self.value(x);
        let mut out = Vec::with_capacity(pairs.len());
        for &(u, v) in pairs.iter() {
            if u >= m.rows() || v >= m.rows() {
                return Err(Error::Index { index: u.max(v), len: m.rows() });
            }
            let (a, b) = (m.row(u), m.row(v));
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                let node = if na == 0.0 { u } else { v };
                return Err(Error::Numeric(format!("zero-norm row at node {node}")));
            }
            out.push(dot(a, b) / (na * nb));
        }
        let value = Matrix::column(&out);
        Ok(self.unary(x, value, Op::PairCosine(x, pairs)))
    }

    pub fn gather_rows(&mut self, x: Var, indices: Arc<Vec<usize>>) -> Result<Var> {
        let m = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= m.rows()) {
            return Err(Error::Index { index: bad, len: m.rows() });
        }
        let value = m.select_rows(&indices);
        Ok(self.unary(x, value, Op::GatherRows(x, indices)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        self.unary(x, value, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).mean());
        self.unary(x, value, Op::Mean(x))
    }

    /// Mean cross-entropy of row logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>) -> Result<Var> {
        let z = self.value(logits);
        if labels.len() != z.rows() {
            return Err(Error::Length(format!("{} labels for {} rows", labels.len(), z.rows())));
        }
        if z.rows() == 0 {
            return Err(Error::Usage("cross-entropy over zero rows".into()));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= z.cols() {
                return Err(Error::Index { index: y, len: z.cols() });
            }
            let row = z.row(i);
            total += logsumexp(row) - row[y];
        }
        let value = Matrix::scalar(total / z.rows() as f64);
        Ok(self.unary(logits, value, Op::CrossEntropy(logits, labels)))
    }

    /// Mean over rows of `-sum_c target_c * log softmax(logits)_c`.
    pub fn soft_cross_entropy(&mut self, logits: Var, target: Var) -> Result<Var> {
        let (z, p) = (self.value(logits), self.value(target));
        z.check_same_shape(p, "soft cross-entropy")?;
        if z.rows() == 0 {
            return Err(Error::Usage("cross-entropy over zero rows".into()));
        }
        let mut total = 0.0;
        for i in 0..z.rows() {
            let row = z.row(i);
            let lse = logsumexp(row);
            total -= row.iter().zip(p.row(i)).map(|(&zc, &pc)| pc * (zc - lse)).sum::<f64>();
        }
        let value = Matrix::scalar(total / z.rows() as f64);
        Ok(self.binary(logits, target, value, Op::SoftCrossEntropy(logits, target)))
    }

    /// Mean binary cross-entropy of `sigmoid(x)` against 0/1 targets.
    pub fn bce_with_logits(&mut self, x: Var, targets: Arc<Vec<f64>>) -> Result<Var> {
        let m = self.value(x);
        if m.len() != targets.len() {
            return Err(Error::Length(format!("{} logits vs {} targets", m.len(), targets.len())));
        }
        if targets.is_empty() {
            return Err(Error::Usage("binary cross-entropy over zero entries".into()));
        }
        let total: f64 = m.as_slice().iter().zip(targets.iter()).map(|(&v, &t)| bce_logit(v, t)).sum();
        let value = Matrix::scalar(total / targets.len() as f64);
        Ok(self.unary(x, value, Op::BceWithLogits(x, targets)))
    }

    /// Gradients of the scalar `loss` with respect to every recorded node
    /// that depends on a parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Dimension(format!("loss must be 1x1, got {}x{}", shape.0, shape.1)));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Matrix::scalar(1.0));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(&node.op, &node.value, &g, &mut grads)?;
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = self.value(*a).t_matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*row) {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in g.iter_rows() {
                        for (o, &x) in gr.as_mut_slice().iter_mut().zip(r) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *row, gr);
                }
            }
            Op::Affine(x, scale) => self.accumulate(grads, *x, g.scale(*scale)),
            Op::Elu(x) => {
                let gx = self.value(*x).zip_map(g, |v, gv| if v > 0.0 { gv } else { gv * v.exp() })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Abs(x) => {
                let gx = self.value(*x).zip_map(g, |v, gv| gv * sign(v))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Recip(x) => {
                let gx = self.value(*x).zip_map(g, |v, gv| -gv / (v * v))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Clamp(x, lo, hi) => {
                let gx = self
                    .value(*x)
                    .zip_map(g, |v, gv| if v >= *lo && v <= *hi { gv } else { 0.0 })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Ln(x, floor) => {
                let gx = self.value(*x).zip_map(g, |v, gv| if v > *floor { gv / v } else { 0.0 })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(z) => {
                let mut gz = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let (s, gi) = (out.row(i), g.row(i));
                    let inner = dot(s, gi);
                    for ((o, &sv), &gv) in gz.row_mut(i).iter_mut().zip(s).zip(gi) {
                        *o = sv * (gv - inner);
                    }
                }
                self.accumulate(grads, *z, gz);
            }
            Op::Standardize(x, sigmas) => {
                let n = out.cols() as f64;
                let mut gx = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let (y, gi) = (out.row(i), g.row(i));
                    let g_mean = gi.iter().sum::<f64>() / n;
                    let gy = dot(gi, y) / (n - 1.0);
                    let sigma = sigmas[i];
                    for ((o, &yv), &gv) in gx.row_mut(i).iter_mut().zip(y).zip(gi) {
                        *o = (gv - g_mean - yv * gy) / sigma;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sparse(h, op) => self.accumulate(grads, *h, op.apply_transpose(g)),
            Op::PairCosine(x, pairs) => {
                let m = self.value(*x);
                let mut gx = Matrix::zeros(m.rows(), m.cols());
                for (k, &(u, v)) in pairs.iter().enumerate() {
                    let gk = g.as_slice()[k];
                    if gk == 0.0 {
                        continue;
                    }
                    let (a, b) = (m.row(u), m.row(v));
                    let (na, nb) = (norm(a), norm(b));
                    let c = out.as_slice()[k];
                    let inv = 1.0 / (na * nb);
                    for j in 0..m.cols() {
                        let da = b[j] * inv - c * a[j] / (na * na);
                        let db = a[j] * inv - c * b[j] / (nb * nb);
                        gx[(u, j)] += gk * da;
                        gx[(v, j)] += gk * db;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GatherRows(x, indices) => {
                let m = self.value(*x);
                let mut gx = Matrix::zeros(m.rows(), m.cols());
                for (k, &i) in indices.iter().enumerate() {
                    for (o, &gv) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += gv;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                self.accumulate(grads, *x, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(x) => {
                let (r, c) = self.value(*x).shape();
                let n = (r * c) as f64;
                self.accumulate(grads, *x, Matrix::filled(r, c, g.item() / n));
            }
            Op::CrossEntropy(z, labels) => {
                let zm = self.value(*z);
                let mut gz = row_softmax(zm);
                let scale = g.item() / zm.rows() as f64;
                for (i, &y) in labels.iter().enumerate() {
                    gz[(i, y)] -= 1.0;
                }
                self.accumulate(grads, *z, gz.scale(scale));
            }
            Op::SoftCrossEntropy(z, p) => {
                let (zm, pm) = (self.value(*z), self.value(*p));
                let scale = g.item() / zm.rows() as f64;
                if self.rg(*z) {
                    let s = row_softmax(zm);
                    let mut gz = Matrix::zeros(zm.rows(), zm.cols());
                    for i in 0..zm.rows() {
                        let mass: f64 = pm.row(i).iter().sum();
                        for ((o, &sv), &pv) in gz.row_mut(i).iter_mut().zip(s.row(i)).zip(pm.row(i)) {
                            *o = scale * (mass * sv - pv);
                        }
                    }
                    self.accumulate(grads, *z, gz);
                }
                if self.rg(*p) {
                    let mut gp = Matrix::zeros(pm.rows(), pm.cols());
                    for i in 0..zm.rows() {
                        let row = zm.row(i);
                        let lse = logsumexp(row);
                        for (o, &zc) in gp.row_mut(i).iter_mut().zip(row) {
                            *o = -scale * (zc - lse);
                        }
                    }
                    self.accumulate(grads, *p, gp);
                }
            }
            Op::BceWithLogits(x, targets) => {
                let m = self.value(*x);
                let scale = g.item() / targets.len() as f64;
                let data: Vec<f64> =
                    m.as_slice().iter().zip(targets.iter()).map(|(&v, &t)| scale * (sigmoid(v) - t)).collect();
                self.accumulate(grads, *x, Matrix::from_vec(m.rows(), m.cols(), data)?);
            }
        }
        Ok(())
    }
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
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

/// `-[t ln sigmoid(x) + (1 - t) ln(1 - sigmoid(x))]`, stable for large |x|.
#[inline]
pub fn bce_logit(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax with max subtraction.
pub fn row_softmax(z: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        let row = z.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(i);
        let mut total = 0.0;
        for (dst, &v) in o.iter_mut().zip(row) {
            *dst = (v - max).exp();
            total += *dst;
        }
        for dst in o.iter_mut() {
            *dst /= total;
        }
    }
    out
}

/// Row-wise `(x - mean) / std` using the unbiased std. Also returns each row's std.
pub fn row_standardize(x: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let n = x.cols();
    if n < 2 {
        return Err(Error::Numeric("standardization needs at least two columns".into()));
    }
    let mut out = Matrix::zeros(x.rows(), n);
    let mut sigmas = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let sigma = var.sqrt();
        if sigma == 0.0 || !sigma.is_finite() {
            return Err(Error::Numeric(format!("row {i} has zero spread and cannot be standardized")));
        }
        for (o, &v) in out.row_mut(i).iter_mut().zip(row) {
            *o = (v - mean) / sigma;
        }
        sigmas.push(sigma);
    }
    Ok((out, sigmas))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_known_rows() {
        let z = Matrix::from_rows(&[[0.0, 0.0, 0.0]]);
        let s = row_softmax(&z);
        for &v in s.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = row_softmax(&Matrix::from_rows(&[[2f64.ln(), 0.0]]));
        assert!((s[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        let s = row_softmax(&Matrix::from_rows(&[[1000.0, 0.0]]));
        assert!(s.is_finite());
        assert!((s[(0, 0)] - 1.0).abs() < 1e-15 && s[(0, 1)] < 1e-300);
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.0), 1.0);
        assert!((elu(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::from_rows(&[[1.0, 2.0]]));
        let unused = tape.param(Matrix::from_rows(&[[3.0], [4.0]]));
        let loss = tape.sum(a);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(a), Matrix::from_rows(&[[1.0, 1.0]]));
        assert_eq!(grads.wrt(unused), Matrix::zeros(2, 1));
    }

    #[test]
    fn constants_are_not_differentiated() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[[1.0, 2.0]]));
        let w = tape.param(Matrix::from_rows(&[[1.0], [1.0]]));
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.wrt(w), Matrix::from_rows(&[[1.0], [2.0]]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::zeros(2, 2));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn bce_at_zero_is_ln2() {
        assert!((bce_logit(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((bce_logit(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn standardize_rejects_constant_row() {
        assert!(row_standardize(&Matrix::from_rows(&[[0.5, 0.5]])).is_err());
    }
}
