//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive as it is evaluated. Node values are
//! computed eagerly, so the forward pass is simply the sequence of calls that
//! built the tape. [`Tape::backward`] walks the record in reverse and
//! accumulates adjoints.

use std::collections::BTreeMap;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Rows with Euclidean norm below this are left untouched by
/// [`Tape::l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

/// Offset added inside [`Tape::log_clamped`].
pub const LOG_EPS: f64 = 1e-12;

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
    Constant,
    Param(String),
    MatMul(Var, Var),
    /// a * b^T
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    L2NormRows(Var),
    SoftmaxRows(Var),
    LogClamped(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SelectRows(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    VStack(Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Hadamard(..) => "hadamard",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::L2NormRows(_) => "l2_normalize_rows",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::LogClamped(_) => "log",
            Op::Transpose(_) => "transpose",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SelectRows(..) => "select_rows",
            Op::SelectCols(..) => "select_cols",
            Op::VStack(_) => "vstack",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default, Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    params: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.adjoints.get(var.0).and_then(Option::as_ref)
    }

    /// Adjoint of a named parameter. Parameters that do not influence the
    /// output get an all-zero adjoint.
    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Matrix> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Matrix> {
        self.params
    }
}

pub fn tanh_map(a: &Matrix) -> Matrix {
    a.map(f64::tanh)
}

pub fn l2_normalize_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm >= NORM_EPS {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

pub fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

/// Numerically stable softmax of a slice, in place. An empty slice is left
/// empty.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Registers a differentiable leaf under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Matrix) -> Var {
        self.push(value, Op::Param(name.into()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_transposed(self.value(b))?;
        Ok(self.push(value, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    /// Adds the `1 x cols` row `bias` to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::shape(
                "add_row_bias",
                format!(
                    "bias {}x{} for a {}x{} input",
                    bv.rows(),
                    bv.cols(),
                    av.rows(),
                    av.cols()
                ),
            ));
        }
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(bv.as_slice()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRowBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = tanh_map(self.value(a));
        self.push(value, Op::Tanh(a))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let value = l2_normalize_rows(self.value(a));
        self.push(value, Op::L2NormRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Elementwise `ln(a + LOG_EPS)`.
    pub fn log_clamped(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| (v + LOG_EPS).ln());
        self.push(value, Op::LogClamped(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = (m.rows() * m.cols()).max(1) as f64;
        let value = Matrix::filled(1, 1, m.sum() / n);
        self.push(value, Op::Mean(a))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m.rows()) {
            return Err(Error::shape(
                "select_rows",
                format!("row {bad} of a {}-row matrix", m.rows()),
            ));
        }
        let value = m.select_rows(idx);
        Ok(self.push(value, Op::SelectRows(a, idx.to_vec())))
    }

    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&j| j >= m.cols()) {
            return Err(Error::shape(
                "select_cols",
                format!("column {bad} of a {}-column matrix", m.cols()),
            ));
        }
        let value = m.select_cols(idx);
        Ok(self.push(value, Op::SelectCols(a, idx.to_vec())))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::vstack(&mats)?;
        Ok(self.push(value, Op::VStack(parts.to_vec())))
    }

    /// First node whose value holds a NaN or infinity, with its op name.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .position(|n| !n.value.all_finite())
            .map(|i| (i, self.nodes[i].op.name()))
    }

    /// Back-propagates from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 output, got {}x{}",
                out.rows(),
                out.cols()
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Param(_) => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    // dA = G B^T, dB = A^T G
                    let da = g.matmul_transposed(self.value(*b))?;
                    let db = self.value(*a).transposed_matmul(&g)?;
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::MatMulT(a, b) => {
                    // C = A B^T: dA = G B, dB = G^T A
                    let da = g.matmul(self.value(*b))?;
                    let db = g.transposed_matmul(self.value(*a))?;
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0))?;
                    accumulate(&mut adj, *a, g)?;
                }
                Op::Hadamard(a, b) => {
                    let da = g.hadamard(self.value(*b))?;
                    let db = g.hadamard(self.value(*a))?;
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::AddRowBias(a, bias) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for row in g.row_iter() {
                        for (d, v) in db.as_mut_slice().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, *a, g)?;
                    accumulate(&mut adj, *bias, db)?;
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s))?,
                Op::Tanh(a) => {
                    let da = g.zip_map(&node.value, "tanh_grad", |gi, y| gi * (1.0 - y * y))?;
                    accumulate(&mut adj, *a, da)?;
                }
                Op::L2NormRows(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut da = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm < NORM_EPS {
                            continue;
                        }
                        let (yr, gr) = (y.row(i), g.row(i));
                        let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in da.row_mut(i).iter_mut().zip(yr).zip(gr) {
                            *d = (gv - yv * proj) / norm;
                        }
                    }
                    accumulate(&mut adj, *a, da)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in da.row_mut(i).iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - inner);
                        }
                    }
                    accumulate(&mut adj, *a, da)?;
                }
                Op::LogClamped(a) => {
                    let da = g.zip_map(self.value(*a), "log_grad", |gi, x| gi / (x + LOG_EPS))?;
                    accumulate(&mut adj, *a, da)?;
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose())?,
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g[(0, 0)]))?;
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let n = (r * c).max(1) as f64;
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g[(0, 0)] / n))?;
                }
                Op::SelectRows(a, idx) => {
                    let (r, c) = self.value(*a).shape();
                    let mut da = Matrix::zeros(r, c);
                    for (k, &i) in idx.iter().enumerate() {
                        for (d, v) in da.row_mut(i).iter_mut().zip(g.row(k)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, *a, da)?;
                }
                Op::SelectCols(a, idx) => {
                    let (r, c) = self.value(*a).shape();
                    let mut da = Matrix::zeros(r, c);
                    for i in 0..r {
                        for (k, &j) in idx.iter().enumerate() {
                            da[(i, j)] += g[(i, k)];
                        }
                    }
                    accumulate(&mut adj, *a, da)?;
                }
                Op::VStack(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        let rows: Vec<usize> = (offset..offset + r).collect();
                        accumulate(&mut adj, p, g.select_rows(&rows))?;
                        offset += r;
                    }
                }
            }
        }

        let mut params = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let grad = adj
                    .get(i)
                    .and_then(Option::as_ref)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                match params.get_mut(name) {
                    None => {
                        params.insert(name.clone(), grad);
                    }
                    Some(existing) => existing.add_assign(&grad)?,
                }
            }
        }
        Ok(Gradients {
            adjoints: adj,
            params,
        })
    }
}

fn accumulate(adj: &mut [Option<Matrix>], target: Var, grad: Matrix) -> Result<()> {
    match &mut adj[target.0] {
        Some(existing) => existing.add_assign(&grad),
        slot @ None => {
            *slot = Some(grad);
            Ok(())
        }
    }
}
