//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the nodes in reverse creation order, so the
//! recorded graph is acyclic by construction. Values that must not receive
//! gradients (stopped constants such as transport plans or soft
//! assignments) enter the graph as leaves or as data captured inside an
//! operation.

use std::rc::Rc;

use crate::error::{Error, Result};

use super::eig::{self, EigPair, SpectralFn};
use super::Matrix;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-sparse left operand for [`Graph::sparse_matmul`]: row `i` lists
/// `(column, value)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    pub cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        Self { cols, rows }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows.len(), self.cols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// Per-attribution linear mixing: column `q` of the output is
/// `weights[q]ᵀ · z[:, q] + offset[:, q]`.
#[derive(Debug, Clone)]
pub struct ColumnMix {
    pub weights: Vec<Matrix>,
    pub offset: Matrix,
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Inverse(Var),
    Trace(Var),
    Sum(Var),
    RowSums(Var),
    Diag(Var),
    DiagMat(Var),
    RowSoftmax(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ConcatCols(Rc<[Var]>),
    GatherRows(Var, Rc<[usize]>),
    SparseMatMul(Rc<SparseRows>, Var),
    ColumnMix(Var, Rc<ColumnMix>),
    TransportCost(Var, Var, Rc<[Matrix]>),
    Spectral(Var, SpectralFn, f64),
    Eigenvalues(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Inverse(..) => "inverse",
            Op::Trace(..) => "trace",
            Op::Sum(..) => "sum",
            Op::RowSums(..) => "row_sums",
            Op::Diag(..) => "diag",
            Op::DiagMat(..) => "diag_mat",
            Op::RowSoftmax(..) => "row_softmax",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Log(..) => "log",
            Op::Abs(..) => "abs",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::ConcatCols(..) => "concat_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::SparseMatMul(..) => "sparse_matmul",
            Op::ColumnMix(..) => "column_mix",
            Op::TransportCost(..) => "transport_cost",
            Op::Spectral(..) => "spectral",
            Op::Eigenvalues(..) => "eigenvalues",
        }
    }
}

/// A recorded computation.
#[derive(Clone, Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Matrix>,
    eigs: Vec<Option<EigPair>>,
}

/// Gradients of a scalar root with respect to every node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zero when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        self.grads[v.0].take().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.0];
            Matrix::zeros(r, c)
        })
    }
}

fn row_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn forward(op: &Op, values: &[Matrix]) -> Result<(Matrix, Option<EigPair>)> {
    let val = |v: &Var| &values[v.0];
    let out = match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::Add(a, b) => val(a).add(val(b)),
        Op::Sub(a, b) => val(a).sub(val(b)),
        Op::Mul(a, b) => val(a).hadamard(val(b)),
        Op::Div(a, b) => val(a).div_elem(val(b)),
        Op::Scale(a, s) => val(a).scale(*s),
        Op::Offset(a, s) => val(a).map(|x| x + s),
        Op::MatMul(a, b) => val(a).matmul(val(b)),
        Op::Transpose(a) => val(a).transpose(),
        Op::Inverse(a) => val(a).inverse()?,
        Op::Trace(a) => Matrix::scalar(val(a).trace()),
        Op::Sum(a) => Matrix::scalar(val(a).sum()),
        Op::RowSums(a) => Matrix::column_vector(val(a).row_sums()),
        Op::Diag(a) => {
            let d = val(a).diag();
            Matrix::from_vec(1, d.len(), d)
        }
        Op::DiagMat(a) => Matrix::from_diag(val(a).as_slice()),
        Op::RowSoftmax(a) => row_softmax(val(a)),
        Op::Sigmoid(a) => val(a).map(sigmoid),
        Op::Tanh(a) => val(a).map(f64::tanh),
        Op::Log(a) => val(a).map(f64::ln),
        Op::Abs(a) => val(a).map(f64::abs),
        Op::Square(a) => val(a).map(|x| x * x),
        Op::Clamp(a, lo, hi) => val(a).map(|x| x.clamp(*lo, *hi)),
        Op::AddRow(a, r) => {
            let (m, row) = (val(a), val(r));
            Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] + row.as_slice()[j])
        }
        Op::MulRow(a, r) => {
            let (m, row) = (val(a), val(r));
            Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * row.as_slice()[j])
        }
        Op::ConcatCols(parts) => {
            let blocks: Vec<&Matrix> = parts.iter().map(val).collect();
            Matrix::hcat(&blocks)
        }
        Op::GatherRows(a, idx) => {
            let m = val(a);
            let mut data = Vec::with_capacity(idx.len() * m.cols());
            for &i in idx.iter() {
                data.extend_from_slice(m.row(i));
            }
            Matrix::from_vec(idx.len(), m.cols(), data)
        }
        Op::SparseMatMul(sp, w) => {
            let w = val(w);
            let mut out = Matrix::zeros(sp.rows.len(), w.cols());
            for (i, row) in sp.rows.iter().enumerate() {
                let acc = out.row_mut(i);
                for &(j, v) in row {
                    for (o, &x) in acc.iter_mut().zip(w.row(j)) {
                        *o += v * x;
                    }
                }
            }
            out
        }
        Op::ColumnMix(z, mix) => {
            let z = val(z);
            let mut out = mix.offset.clone();
            for (q, w) in mix.weights.iter().enumerate() {
                for i in 0..w.rows() {
                    let zi = z[(i, q)];
                    for (k, &wik) in w.row(i).iter().enumerate() {
                        out[(k, q)] += wik * zi;
                    }
                }
            }
            out
        }
        Op::TransportCost(s, t, plans) => {
            let (s, t) = (val(s), val(t));
            let k = s.rows();
            let norm = 1.0 / (k * k) as f64;
            let mut out = Matrix::zeros(1, s.cols());
            for (q, plan) in plans.iter().enumerate() {
                let mut acc = 0.0;
                for i in 0..k {
                    for j in 0..t.rows() {
                        let d = s[(i, q)] - t[(j, q)];
                        acc += plan[(i, j)] * d * d;
                    }
                }
                out[(0, q)] = norm * acc;
            }
            out
        }
        Op::Spectral(a, f, cutoff) => {
            let e = eig::sym_eig(val(a))?;
            let m = eig::apply_spectral(&e, *f, *cutoff)?;
            return Ok((m, Some(e)));
        }
        Op::Eigenvalues(a) => {
            let e = eig::sym_eig(val(a))?;
            let m = Matrix::column_vector(e.eigenvalues.clone());
            return Ok((m, Some(e)));
        }
    };
    Ok((out, None))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.ops[v.0], Op::Leaf)
    }

    /// Name of the primitive that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.ops[v.0].name()
    }

    /// Adds a leaf. Parameters and stopped constants are both leaves; only
    /// the caller decides which gradients to read.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.ops.push(Op::Leaf);
        self.values.push(value);
        self.eigs.push(None);
        Var(self.values.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Matrix::scalar(value))
    }

    fn try_push(&mut self, op: Op) -> Result<Var> {
        let (value, e) = forward(&op, &self.values)?;
        self.ops.push(op);
        self.values.push(value);
        self.eigs.push(e);
        Ok(Var(self.values.len() - 1))
    }

    fn push(&mut self, op: Op) -> Var {
        self.try_push(op).expect("infallible graph op failed")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{what}: shape mismatch"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        self.push(Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        self.push(Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "div");
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.push(Op::Scale(a, s))
    }

    /// `a + s` elementwise.
    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        self.push(Op::Offset(a, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).cols(),
            self.value(b).rows(),
            "matmul: inner dimension mismatch"
        );
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.push(Op::Transpose(a))
    }

    pub fn inverse(&mut self, a: Var) -> Result<Var> {
        self.try_push(Op::Inverse(a))
    }

    pub fn trace(&mut self, a: Var) -> Var {
        self.push(Op::Trace(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    /// Column vector of row sums.
    pub fn row_sums(&mut self, a: Var) -> Var {
        self.push(Op::RowSums(a))
    }

    /// Diagonal as a `1×n` row.
    pub fn diag(&mut self, a: Var) -> Var {
        self.push(Op::Diag(a))
    }

    /// Square diagonal matrix from a row or column vector.
    pub fn diag_mat(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        assert!(r == 1 || c == 1, "diag_mat needs a vector");
        self.push(Op::DiagMat(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        self.push(Op::RowSoftmax(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.push(Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.push(Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Square(a))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.push(Op::Clamp(a, lo, hi))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).shape(), (1, self.value(a).cols()));
        self.push(Op::AddRow(a, row))
    }

    /// Scales column `j` of `a` by `row[j]`, i.e. `a · diag(row)`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).shape(), (1, self.value(a).cols()));
        self.push(Op::MulRow(a, row))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        assert!(parts.iter().all(|&p| self.value(p).rows() == rows));
        self.push(Op::ConcatCols(parts.into()))
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let n = self.value(a).rows();
        assert!(idx.iter().all(|&i| i < n), "gather_rows: index out of range");
        self.push(Op::GatherRows(a, idx.into()))
    }

    /// `S · w` for a constant row-sparse `S`.
    pub fn sparse_matmul(&mut self, s: Rc<SparseRows>, w: Var) -> Var {
        assert_eq!(s.cols, self.value(w).rows(), "sparse_matmul: shape mismatch");
        self.push(Op::SparseMatMul(s, w))
    }

    pub fn column_mix(&mut self, z: Var, mix: Rc<ColumnMix>) -> Var {
        let (n, d) = self.value(z).shape();
        assert_eq!(mix.weights.len(), d);
        assert!(mix.weights.iter().all(|w| w.rows() == n));
        self.push(Op::ColumnMix(z, mix))
    }

    /// Per-column transport cost `(1/K²) Σ_ij π_q[i,j] (s[i,q] − t[j,q])²`
    /// as a `1×D` row, with the plans held constant.
    pub fn transport_cost(&mut self, src: Var, tgt: Var, plans: Rc<[Matrix]>) -> Var {
        let (k, d) = self.value(src).shape();
        assert_eq!(self.value(tgt).cols(), d);
        assert_eq!(plans.len(), d);
        assert!(plans
            .iter()
            .all(|p| p.shape() == (k, self.value(tgt).rows())));
        self.push(Op::TransportCost(src, tgt, plans))
    }

    /// Spectral matrix function with the absolute cutoff fixed at record
    /// time from `tol · max|λ|`.
    pub fn spectral(&mut self, a: Var, f: SpectralFn, tol: f64) -> Result<Var> {
        let e = eig::sym_eig(self.value(a))?;
        let cutoff = eig::spectral_cutoff(&e, tol);
        self.try_push(Op::Spectral(a, f, cutoff))
    }

    /// Ascending eigenvalues as a column vector.
    pub fn eigenvalues(&mut self, a: Var) -> Result<Var> {
        self.try_push(Op::Eigenvalues(a))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {:?}",
                self.value(root).shape()
            )));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.values.len()];
        grads[root.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let out = &self.values[idx];
            let val = |v: &Var| &self.values[v.0];
            match &self.ops[idx] {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.scale(-1.0));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, g.hadamard(val(b)));
                    acc(&mut grads, *b, g.hadamard(val(a)));
                }
                Op::Div(a, b) => {
                    let (x, y) = (val(a), val(b));
                    acc(&mut grads, *a, g.div_elem(y));
                    let gb = Matrix::from_fn(y.rows(), y.cols(), |i, j| {
                        -g[(i, j)] * x[(i, j)] / (y[(i, j)] * y[(i, j)])
                    });
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::Offset(a, _) => acc(&mut grads, *a, g),
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.matmul_t(val(b)));
                    acc(&mut grads, *b, val(a).t_matmul(&g));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Inverse(a) => {
                    // X̄ = −Yᵀ Ȳ Yᵀ
                    let y = out;
                    acc(&mut grads, *a, y.t_matmul(&g).matmul_t(y).scale(-1.0));
                }
                Op::Trace(a) => {
                    let n = val(a).rows();
                    acc(&mut grads, *a, Matrix::identity(n).scale(g.item()));
                }
                Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    acc(&mut grads, *a, Matrix::filled(r, c, g.item()));
                }
                Op::RowSums(a) => {
                    let (r, c) = val(a).shape();
                    acc(&mut grads, *a, Matrix::from_fn(r, c, |i, _| g[(i, 0)]));
                }
                Op::Diag(a) => {
                    let (r, c) = val(a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..r.min(c) {
                        ga[(i, i)] = g.as_slice()[i];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::DiagMat(a) => {
                    let (r, c) = val(a).shape();
                    let d = g.diag();
                    acc(&mut grads, *a, Matrix::from_vec(r, c, d));
                }
                Op::RowSoftmax(a) => {
                    let y = out;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                        for j in 0..y.cols() {
                            ga[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    acc(&mut grads, *a, g.hadamard(&out.map(|y| y * (1.0 - y))));
                }
                Op::Tanh(a) => {
                    acc(&mut grads, *a, g.hadamard(&out.map(|y| 1.0 - y * y)));
                }
                Op::Log(a) => acc(&mut grads, *a, g.div_elem(val(a))),
                Op::Abs(a) => {
                    acc(&mut grads, *a, g.hadamard(&val(a).map(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    })));
                }
                Op::Square(a) => acc(&mut grads, *a, g.hadamard(&val(a).scale(2.0))),
                Op::Clamp(a, lo, hi) => {
                    let mask = val(a).map(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, g.hadamard(&mask));
                }
                Op::AddRow(a, r) => {
                    let col_sums = Matrix::from_vec(1, g.cols(), (0..g.cols()).map(|j| {
                        (0..g.rows()).map(|i| g[(i, j)]).sum()
                    }).collect());
                    acc(&mut grads, *r, col_sums);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, r) => {
                    let (m, row) = (val(a), val(r));
                    let gr = Matrix::from_vec(1, m.cols(), (0..m.cols()).map(|j| {
                        (0..m.rows()).map(|i| g[(i, j)] * m[(i, j)]).sum()
                    }).collect());
                    let ga = Matrix::from_fn(m.rows(), m.cols(), |i, j| g[(i, j)] * row.as_slice()[j]);
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts.iter() {
                        let c = val(p).cols();
                        let gp = Matrix::from_fn(g.rows(), c, |i, j| g[(i, start + j)]);
                        acc(&mut grads, *p, gp);
                        start += c;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let (r, c) = val(a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SparseMatMul(sp, w) => {
                    let (r, c) = val(w).shape();
                    let mut gw = Matrix::zeros(r, c);
                    for (i, row) in sp.rows.iter().enumerate() {
                        for &(j, v) in row {
                            for (o, &x) in gw.row_mut(j).iter_mut().zip(g.row(i)) {
                                *o += v * x;
                            }
                        }
                    }
                    acc(&mut grads, *w, gw);
                }
                Op::ColumnMix(z, mix) => {
                    let (n, d) = val(z).shape();
                    let mut gz = Matrix::zeros(n, d);
                    for (q, w) in mix.weights.iter().enumerate() {
                        for i in 0..n {
                            gz[(i, q)] = w.row(i).iter().enumerate().map(|(k, &wik)| wik * g[(k, q)]).sum();
                        }
                    }
                    acc(&mut grads, *z, gz);
                }
                Op::TransportCost(s, t, plans) => {
                    let (sv, tv) = (val(s), val(t));
                    let k = sv.rows();
                    let norm = 1.0 / (k * k) as f64;
                    let mut gs = Matrix::zeros(sv.rows(), sv.cols());
                    let mut gt = Matrix::zeros(tv.rows(), tv.cols());
                    for (q, plan) in plans.iter().enumerate() {
                        let gq = g[(0, q)] * norm * 2.0;
                        for i in 0..sv.rows() {
                            for j in 0..tv.rows() {
                                let w = gq * plan[(i, j)] * (sv[(i, q)] - tv[(j, q)]);
                                gs[(i, q)] += w;
                                gt[(j, q)] -= w;
                            }
                        }
                    }
                    acc(&mut grads, *s, gs);
                    acc(&mut grads, *t, gt);
                }
                Op::Spectral(a, f, cutoff) => {
                    let e = self.eigs[idx].as_ref().expect("spectral node keeps its eigenpairs");
                    acc(&mut grads, *a, eig::spectral_backward(e, *f, *cutoff, &g));
                }
                Op::Eigenvalues(a) => {
                    let e = self.eigs[idx].as_ref().expect("eigenvalue node keeps its eigenpairs");
                    acc(&mut grads, *a, eig::eigenvalues_backward(e, g.as_slice()));
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.values.iter().map(Matrix::shape).collect(),
        })
    }

    /// Recomputes the value of `root` with some leaves replaced. Every
    /// non-leaf node is re-evaluated with the constants captured at record
    /// time (plans, assignment weights, spectral cutoffs).
    pub fn replay(&self, root: Var, overrides: &[(Var, &Matrix)]) -> Result<Matrix> {
        let mut values: Vec<Matrix> = Vec::with_capacity(root.0 + 1);
        for idx in 0..=root.0 {
            let v = match &self.ops[idx] {
                Op::Leaf => overrides
                    .iter()
                    .find(|(var, _)| var.0 == idx)
                    .map(|(_, m)| (*m).clone())
                    .unwrap_or_else(|| self.values[idx].clone()),
                op => forward(op, &values)?.0,
            };
            values.push(v);
        }
        Ok(values.pop().unwrap())
    }
}
