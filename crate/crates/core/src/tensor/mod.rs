//! Dense 2-D tensors with a reverse-mode tape and the handful of layers the forecaster needs.
//!
//! Everything is row-major `f64`. Sequences over graph nodes are stored as stacked rows
//! (`[nodes * steps, features]`), so convolutions and recurrent cells reduce to matrix products.

mod gradcheck;
mod optim;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{
    adam_step, read_checkpoint, write_checkpoint, AdamConfig, Checkpoint, LrSchedule, ParamStore,
};
pub use tape::{Grads, Graph, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for shape [{rows}, {cols}]", data.len())));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn eye(n: usize) -> Self {
        Tensor::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn reshaped(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to [{rows}, {cols}]", self.shape())));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `c = beta * c + a_op * b_op` with explicit strides, row-major output `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the callers derive strides and extents from the tensors' shapes, so every index
    // the kernel touches lies inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `a @ b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = Tensor::zeros(a.rows, b.cols);
    gemm(a.rows, a.cols, b.cols, &a.data, a.cols, 1, &b.data, b.cols, 1, 0.0, &mut out.data);
    Ok(out)
}

/// Constant sparse matrix in CSR layout (normalized adjacency, region averaging).
#[derive(Clone, Debug, PartialEq)]
pub struct Sparse {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Sparse {
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for &(c, v) in row {
                if c >= cols {
                    return Err(Error::Shape(format!("column {c} outside {cols}")));
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Sparse { rows: rows.len(), cols, indptr, indices, values })
    }

    /// Symmetric GCN propagation matrix over neighborhoods `N(i)`:
    /// entry `(i, j) = 1 / sqrt(D(i) D(j))` for `j` in `N(i) ∪ {i}`, where `D(i) = |N(i) ∪ {i}|`.
    pub fn gcn_normalized(neighborhoods: &[Vec<usize>]) -> Result<Self> {
        let n = neighborhoods.len();
        let sets: Vec<Vec<usize>> = neighborhoods
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                let mut s: Vec<usize> = nb.iter().copied().chain(std::iter::once(i)).collect();
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        for (i, s) in sets.iter().enumerate() {
            for &j in s {
                if j >= n {
                    return Err(Error::InvalidArgument(format!("neighbor {j} outside {n} nodes")));
                }
                if sets[j].binary_search(&i).is_err() {
                    return Err(Error::InvalidArgument(format!("adjacency is not symmetric at ({i}, {j})")));
                }
            }
        }
        let degree: Vec<f64> = sets.iter().map(|s| s.len() as f64).collect();
        let rows: Vec<Vec<(usize, f64)>> = sets
            .iter()
            .enumerate()
            .map(|(i, s)| s.iter().map(|&j| (j, 1.0 / (degree[i] * degree[j]).sqrt())).collect())
            .collect();
        Sparse::from_rows(n, &rows)
    }

    /// Row-averaging matrix: output row `g` is the mean of input rows `groups[g]`.
    pub fn group_mean(n: usize, groups: &[Vec<usize>]) -> Result<Self> {
        let rows: Vec<Vec<(usize, f64)>> = groups
            .iter()
            .map(|g| {
                let w = 1.0 / g.len().max(1) as f64;
                g.iter().map(|&j| (j, w)).collect()
            })
            .collect();
        Sparse::from_rows(n, &rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn matmul(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows != self.cols {
            return Err(Error::Shape(format!("sparse [{}, {}] x {:?}", self.rows, self.cols, x.shape())));
        }
        let f = x.cols;
        let mut out = Tensor::zeros(self.rows, f);
        for r in 0..self.rows {
            let dst = &mut out.data[r * f..(r + 1) * f];
            for (c, w) in self.row_entries(r) {
                for (d, s) in dst.iter_mut().zip(&x.data[c * f..(c + 1) * f]) {
                    *d += w * s;
                }
            }
        }
        Ok(out)
    }

    /// `out += self^T @ dy`.
    pub(crate) fn matmul_transposed_into(&self, dy: &Tensor, out: &mut Tensor) {
        let f = dy.cols;
        for r in 0..self.rows {
            let src = &dy.data[r * f..(r + 1) * f];
            for (c, w) in self.row_entries(r) {
                for (d, s) in out.data[c * f..(c + 1) * f].iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Reference LSTM step on plain tensors (rows are independent sequences).
///
/// `w_ih` is `[4H, in]`, `w_hh` is `[4H, H]`, biases `[1, 4H]`; gate blocks are ordered
/// `i, f, g, o`.
pub struct LstmWeights<'a> {
    pub w_ih: &'a Tensor,
    pub w_hh: &'a Tensor,
    pub b_ih: &'a Tensor,
    pub b_hh: &'a Tensor,
}

pub fn lstm_cell(x: &Tensor, h_prev: &Tensor, c_prev: &Tensor, w: &LstmWeights<'_>) -> Result<(Tensor, Tensor)> {
    let hidden = w.w_hh.cols();
    if w.w_ih.rows() != 4 * hidden || w.w_hh.rows() != 4 * hidden || x.cols() != w.w_ih.cols() {
        return Err(Error::Shape("lstm weights do not match input/hidden sizes".into()));
    }
    if h_prev.shape() != [x.rows(), hidden] || c_prev.shape() != [x.rows(), hidden] {
        return Err(Error::Shape("lstm state shape mismatch".into()));
    }
    let n = x.rows();
    let mut h = Tensor::zeros(n, hidden);
    let mut c = Tensor::zeros(n, hidden);
    for r in 0..n {
        let pre = |gate: usize, j: usize| {
            let row = gate * hidden + j;
            let mut s = w.b_ih.data[row] + w.b_hh.data[row];
            s += x.row(r).iter().zip(w.w_ih.row(row)).map(|(a, b)| a * b).sum::<f64>();
            s += h_prev.row(r).iter().zip(w.w_hh.row(row)).map(|(a, b)| a * b).sum::<f64>();
            s
        };
        for j in 0..hidden {
            let i = sigmoid(pre(0, j));
            let f = sigmoid(pre(1, j));
            let g = pre(2, j).tanh();
            let o = sigmoid(pre(3, j));
            let ct = f * c_prev.get(r, j) + i * g;
            c.data[r * hidden + j] = ct;
            h.data[r * hidden + j] = o * ct.tanh();
        }
    }
    Ok((h, c))
}

#[cfg(test)]
mod tests;
