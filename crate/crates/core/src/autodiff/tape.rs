//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every forward op appends a node holding its value and the handles of its
//! inputs. [`Tape::backward`] walks the nodes in reverse insertion order, which
//! is a valid topological order because inputs always precede outputs.

use std::sync::Arc;

use crate::error::{Result, SigilError};
use crate::matrix::{gemm, Csr, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul(Arc<Csr>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    AddColBroadcast(Var, Var),
    MulRowsBy(Var, Var),
    MulColsBy(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    RowSoftmax(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Powf(Var, f64),
    RowL2Norm(Var),
    RowNormalize(Var),
    FrobeniusSq(Var),
    Sum(Var),
    RowSums(Var),
    SelectRows(Var, Arc<Vec<usize>>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records forward computation for one training step.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `var`; zero when `var` does not influence the loss.
    pub fn get(&self, var: Var) -> Matrix {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> Matrix {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(SigilError::ShapeMismatch { op, left: a.shape(), right: b.shape() });
    }
    Ok(())
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    /// Differentiable leaf (a trainable parameter or an input we want gradients for).
    pub fn param(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Copies the current value of `var` into a fresh constant, cutting the
    /// gradient path.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.nodes[var.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, op_name: &'static str, value: Matrix, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(SigilError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(SigilError::ShapeMismatch { op: "matmul", left: va.shape(), right: vb.shape() });
        }
        let out = gemm(va, false, vb, false);
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Sparse constant times dense variable.
    pub fn sparse_matmul(&mut self, a: &Arc<Csr>, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rows() != a.n() {
            return Err(SigilError::ShapeMismatch {
                op: "sparse_matmul",
                left: (a.n(), a.n()),
                right: vx.shape(),
            });
        }
        let out = a.matmul_dense(vx);
        self.push("sparse_matmul", out, Op::SparseMatMul(Arc::clone(a), x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("elementwise_mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("elementwise_mul", out, Op::Mul(a, b), &[a, b])
    }

    /// `x + 1 b` for a `1 x d` row vector `b`.
    pub fn add_row_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(SigilError::ShapeMismatch { op: "add_row_broadcast", left: vx.shape(), right: vb.shape() });
        }
        let mut out = vx.clone();
        for i in 0..out.rows() {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(vb.as_slice()) {
                *o += bv;
            }
        }
        self.push("add_row_broadcast", out, Op::AddRowBroadcast(x, b), &[x, b])
    }

    /// `x + c 1^T` for an `n x 1` column vector `c`.
    pub fn add_col_broadcast(&mut self, x: Var, c: Var) -> Result<Var> {
        let (vx, vc) = (self.value(x), self.value(c));
        if vc.cols() != 1 || vc.rows() != vx.rows() {
            return Err(SigilError::ShapeMismatch { op: "add_col_broadcast", left: vx.shape(), right: vc.shape() });
        }
        let mut out = vx.clone();
        for i in 0..out.rows() {
            let ci = vc.as_slice()[i];
            out.row_mut(i).iter_mut().for_each(|o| *o += ci);
        }
        self.push("add_col_broadcast", out, Op::AddColBroadcast(x, c), &[x, c])
    }

    /// `diag(c) x` for an `n x 1` column vector `c`.
    pub fn mul_rows_by(&mut self, x: Var, c: Var) -> Result<Var> {
        let (vx, vc) = (self.value(x), self.value(c));
        if vc.cols() != 1 || vc.rows() != vx.rows() {
            return Err(SigilError::ShapeMismatch { op: "mul_rows_by", left: vx.shape(), right: vc.shape() });
        }
        let mut out = vx.clone();
        for i in 0..out.rows() {
            let ci = vc.as_slice()[i];
            out.row_mut(i).iter_mut().for_each(|o| *o *= ci);
        }
        self.push("mul_rows_by", out, Op::MulRowsBy(x, c), &[x, c])
    }

    /// `x diag(r)` for a `1 x d` row vector `r`.
    pub fn mul_cols_by(&mut self, x: Var, r: Var) -> Result<Var> {
        let (vx, vr) = (self.value(x), self.value(r));
        if vr.rows() != 1 || vr.cols() != vx.cols() {
            return Err(SigilError::ShapeMismatch { op: "mul_cols_by", left: vx.shape(), right: vr.shape() });
        }
        let mut out = vx.clone();
        for i in 0..out.rows() {
            for (o, &rv) in out.row_mut(i).iter_mut().zip(vr.as_slice()) {
                *o *= rv;
            }
        }
        self.push("mul_cols_by", out, Op::MulColsBy(x, r), &[x, r])
    }

    pub fn scalar_mul(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).scale(s);
        self.push("scalar_mul", out, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v + s);
        self.push("add_scalar", out, Op::AddScalar(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose();
        self.push("transpose", out, Op::Transpose(x), &[x])
    }

    /// Softmax over each row, computed with max subtraction.
    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        self.push("row_softmax", out, Op::RowSoftmax(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::exp);
        self.push("exp", out, Op::Exp(x), &[x])
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::ln);
        self.push("ln", out, Op::Ln(x), &[x])
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v.powf(p));
        self.push("powf", out, Op::Powf(x, p), &[x])
    }

    /// Euclidean norm of every row, as an `n x 1` column.
    pub fn row_l2_norm(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let norms: Vec<f64> =
            (0..vx.rows()).map(|i| vx.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let out = Matrix::from_vec(vx.rows(), 1, norms);
        self.push("row_l2_norm", out, Op::RowL2Norm(x), &[x])
    }

    /// Scales every row to unit Euclidean norm; all-zero rows stay zero.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        self.push("row_normalize", out, Op::RowNormalize(x), &[x])
    }

    /// Squared Frobenius norm as a `1 x 1` tensor.
    pub fn frobenius_sq(&mut self, x: Var) -> Result<Var> {
        let out = Matrix::scalar(self.value(x).frobenius_sq());
        self.push("frobenius_sq", out, Op::FrobeniusSq(x), &[x])
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Matrix::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    /// Sum along each row, as an `n x 1` column.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let out = Matrix::from_vec(vx.rows(), 1, vx.row_sums());
        self.push("sum_rows", out, Op::RowSums(x), &[x])
    }

    pub fn select_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let vx = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= vx.rows()) {
            return Err(SigilError::ShapeMismatch { op: "select_rows", left: vx.shape(), right: (bad, 0) });
        }
        let out = vx.select_rows(&idx);
        self.push("select_rows", out, Op::SelectRows(x, idx), &[x])
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(SigilError::NotScalar(lv.rows(), lv.cols()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let ga = gemm(g, false, self.value(*b), true);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = gemm(self.value(*a), true, g, false);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::SparseMatMul(a, x) => {
                self.accumulate(grads, *x, a.transpose_matmul_dense(g));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |p, q| p * q));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |p, q| p * q));
                }
            }
            Op::AddRowBroadcast(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*b) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in gb.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddColBroadcast(x, c) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*c) {
                    self.accumulate(grads, *c, Matrix::from_vec(g.rows(), 1, g.row_sums()));
                }
            }
            Op::MulRowsBy(x, c) => {
                let (vx, vc) = (self.value(*x), self.value(*c));
                if self.wants(*x) {
                    let mut gx = g.clone();
                    for i in 0..gx.rows() {
                        let ci = vc.as_slice()[i];
                        gx.row_mut(i).iter_mut().for_each(|o| *o *= ci);
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*c) {
                    let gc: Vec<f64> = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(vx.row(i)).map(|(p, q)| p * q).sum())
                        .collect();
                    self.accumulate(grads, *c, Matrix::from_vec(g.rows(), 1, gc));
                }
            }
            Op::MulColsBy(x, r) => {
                let (vx, vr) = (self.value(*x), self.value(*r));
                if self.wants(*x) {
                    let mut gx = g.clone();
                    for i in 0..gx.rows() {
                        for (o, &rv) in gx.row_mut(i).iter_mut().zip(vr.as_slice()) {
                            *o *= rv;
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*r) {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for ((o, &gv), &xv) in gr.as_mut_slice().iter_mut().zip(g.row(i)).zip(vx.row(i)) {
                            *o += gv * xv;
                        }
                    }
                    self.accumulate(grads, *r, gr);
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.scale(*s)),
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose()),
            Op::RowSoftmax(x) => {
                let mut gx = g.clone();
                for i in 0..gx.rows() {
                    let yi = y.row(i);
                    let dot: f64 = g.row(i).iter().zip(yi).map(|(p, q)| p * q).sum();
                    for (o, &yv) in gx.row_mut(i).iter_mut().zip(yi) {
                        *o = yv * (*o - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => self.accumulate(grads, *x, g.zip_map(y, |gv, yv| if yv > 0.0 { gv } else { 0.0 })),
            Op::Sigmoid(x) => self.accumulate(grads, *x, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv))),
            Op::Exp(x) => self.accumulate(grads, *x, g.zip_map(y, |gv, yv| gv * yv)),
            Op::Ln(x) => self.accumulate(grads, *x, g.zip_map(self.value(*x), |gv, xv| gv / xv)),
            Op::Powf(x, p) => {
                let p = *p;
                self.accumulate(grads, *x, g.zip_map(self.value(*x), |gv, xv| gv * p * xv.powf(p - 1.0)));
            }
            Op::RowL2Norm(x) => {
                let mut gx = self.value(*x).clone();
                for i in 0..gx.rows() {
                    let norm = y.as_slice()[i];
                    let coef = if norm > 0.0 { g.as_slice()[i] / norm } else { 0.0 };
                    gx.row_mut(i).iter_mut().for_each(|o| *o *= coef);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RowNormalize(x) => {
                let vx = self.value(*x);
                let mut gx = g.clone();
                for i in 0..gx.rows() {
                    let norm = vx.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yi = y.row(i);
                    if norm > 0.0 {
                        let dot: f64 = g.row(i).iter().zip(yi).map(|(p, q)| p * q).sum();
                        for (o, &yv) in gx.row_mut(i).iter_mut().zip(yi) {
                            *o = (*o - yv * dot) / norm;
                        }
                    } else {
                        gx.row_mut(i).iter_mut().for_each(|o| *o = 0.0);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::FrobeniusSq(x) => {
                let s = 2.0 * g.item();
                self.accumulate(grads, *x, self.value(*x).scale(s));
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                self.accumulate(grads, *x, Matrix::filled(r, c, g.item()));
            }
            Op::RowSums(x) => {
                let (r, c) = self.shape(*x);
                self.accumulate(grads, *x, Matrix::from_fn(r, c, |i, _| g.as_slice()[i]));
            }
            Op::SelectRows(x, idx) => {
                let (r, c) = self.shape(*x);
                let mut gx = Matrix::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Central finite differences of `f` at every entry of `inputs[k]`.
    fn check_grad(inputs: Vec<Matrix>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|m| tape.param(m)).collect();
        let loss = f(&mut tape, &vars).unwrap();
        let grads = tape.backward(loss).unwrap();
        let h = 1e-5;
        for (k, base) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]);
            for e in 0..base.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(kk, m)| {
                            let mut m = m.clone();
                            if kk == k {
                                m.as_mut_slice()[e] += delta;
                            }
                            t.param(m)
                        })
                        .collect();
                    let l = f(&mut t, &vs).unwrap();
                    t.value(l).item()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = analytic.as_slice()[e];
                let err = (fd - an).abs();
                assert!(
                    err <= 1e-7 || err <= 1e-4 * fd.abs().max(an.abs()),
                    "input {k} entry {e}: analytic {an} vs finite difference {fd}"
                );
            }
        }
    }

    #[test]
    fn row_softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(1, 2));
        let y = t.row_softmax(x).unwrap();
        assert_eq!(t.value(y).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).item(), 0.5);
    }

    #[test]
    fn frobenius_gradient_is_twice_the_input() {
        let mut t = Tape::new();
        let w = t.param(Matrix::from_rows(&[vec![1.0, 2.0]]));
        let l = t.frobenius_sq(w).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_and_unused_leaves_get_zero_gradient() {
        let mut t = Tape::new();
        let w = t.param(Matrix::from_rows(&[vec![1.0, 2.0]]));
        let c = t.constant(Matrix::from_rows(&[vec![3.0, 4.0]]));
        let unused = t.param(Matrix::filled(2, 2, 1.0));
        let p = t.mul(w, c).unwrap();
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(c), Matrix::zeros(1, 2));
        assert_eq!(g.get(unused), Matrix::zeros(2, 2));
        assert_eq!(g.get(w).as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let w = t.param(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(w), Err(SigilError::NotScalar(2, 1))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut t = Tape::new();
        let a = t.param(Matrix::zeros(2, 3));
        let b = t.param(Matrix::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(SigilError::ShapeMismatch { op: "matmul", .. })));
    }

    #[test]
    fn ln_of_zero_signals_non_finite() {
        let mut t = Tape::new();
        let a = t.param(Matrix::zeros(1, 1));
        assert!(matches!(t.ln(a), Err(SigilError::NonFinite { op: "ln" })));
    }

    #[test]
    fn row_softmax_rows_sum_to_one_and_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = t.constant(random(&mut rng, 6, 5).scale(30.0));
        let y = t.row_softmax(x).unwrap();
        for s in t.value(y).row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(t.value(y).as_slice().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn gradients_of_dense_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let bias = random(&mut rng, 1, 2);
        check_grad(vec![a, b, bias], |t, v| {
            let p = t.matmul(v[0], v[1])?;
            let p = t.add_row_broadcast(p, v[2])?;
            let s = t.sigmoid(p)?;
            let r = t.row_softmax(s)?;
            let q = t.mul(r, p)?;
            let q = t.transpose(q)?;
            let f = t.frobenius_sq(q)?;
            t.scalar_mul(f, 0.7)
        });
    }

    #[test]
    fn gradients_of_norm_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, 5, 3);
        let w = random(&mut rng, 5, 3);
        check_grad(vec![x, w], |t, v| {
            let n = t.row_normalize(v[0])?;
            let m = t.mul(n, v[1])?;
            let norms = t.row_l2_norm(m)?;
            let s = t.sum(norms)?;
            let s2 = t.mul(s, s)?;
            let sel = t.select_rows(v[0], Arc::new(vec![4, 1, 1]))?;
            let e = t.exp(sel)?;
            let e = t.add_scalar(e, 1.0)?;
            let l = t.ln(e)?;
            let l = t.sum(l)?;
            t.add(s2, l)
        });
    }

    #[test]
    fn gradients_of_broadcast_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, 4, 3);
        let c = random(&mut rng, 4, 1).map(|v| v.abs() + 0.5);
        let r = random(&mut rng, 1, 3);
        let a = Arc::new(Csr::from_triplets(4, &[(0, 1, 1.0), (1, 0, 1.0), (2, 3, 0.5), (3, 3, 2.0)]));
        check_grad(vec![x, c, r], move |t, v| {
            let y = t.mul_rows_by(v[0], v[1])?;
            let y = t.mul_cols_by(y, v[2])?;
            let y = t.sparse_matmul(&a, y)?;
            let p = t.powf(v[1], -0.5)?;
            let y = t.add_col_broadcast(y, p)?;
            let y = t.relu(y)?;
            let rs = t.sum_rows(y)?;
            let d = t.sub(rs, v[1])?;
            t.frobenius_sq(d)
        });
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut t = Tape::new();
            let a = t.param(random(&mut rng, 8, 8));
            let b = t.matmul(a, a).unwrap();
            let s = t.row_softmax(b).unwrap();
            let l = t.frobenius_sq(s).unwrap();
            let g = t.backward(l).unwrap();
            (t.value(l).item().to_bits(), g.get(a))
        };
        assert_eq!(run(), run());
    }
}
