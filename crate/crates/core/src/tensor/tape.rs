//! Reverse-mode tape. Nodes are appended in evaluation order, so a reverse sweep over node
//! indices visits every node after all of its consumers.

use std::sync::Arc;

use super::{gemm, sigmoid, Sparse, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    Reshape(Var),
    SpMM(Arc<Sparse>, Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    FillMissing { x: Var, fill: Var, present: Arc<[bool]> },
    LstmCell { gx: Var, prev: Option<Var>, w_hh: Var, act: Vec<f64>, tanh_c: Vec<f64> },
    MaskedL1 { x: Var, target: Arc<[f64]>, count: usize },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every leaf that requires them.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(what: &str, a: [usize; 2], b: [usize; 2]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Input data; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// `y = x W^T + b` for row-stacked inputs `x: [n, in]`, `W: [out, in]`, `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, fin] = self.shape(x);
        let [fout, win] = self.shape(w);
        if fin != win {
            return Err(shape_err("linear input/weight", [n, fin], [fout, win]));
        }
        if let Some(b) = b {
            if self.shape(b) != [1, fout] {
                return Err(shape_err("linear bias", self.shape(b), [1, fout]));
            }
        }
        let mut y = Tensor::zeros(n, fout);
        {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value;
            gemm(n, fin, fout, &xv.data, fin, 1, &wv.data, 1, fin, 0.0, &mut y.data);
            if let Some(b) = b {
                let bv = &self.nodes[b.0].value.data;
                for row in y.data.chunks_mut(fout) {
                    for (a, c) in row.iter_mut().zip(bv) {
                        *a += c;
                    }
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Linear { x, w, b }, &inputs))
    }

    fn zip_op(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(what, self.shape(a), self.shape(b)));
        }
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor { rows: av.rows, cols: av.cols, data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_op(a, b, "add", |x, y| x + y)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_op(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_op(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `[1, C]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let [n, c] = self.shape(a);
        if self.shape(row) != [1, c] {
            return Err(shape_err("add_row", self.shape(row), [1, c]));
        }
        let mut y = self.nodes[a.0].value.clone();
        let rv = &self.nodes[row.0].value.data;
        for r in y.data.chunks_mut(c.max(1)).take(n) {
            for (x, b) in r.iter_mut().zip(rv) {
                *x += b;
            }
        }
        Ok(self.push(y, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut y = self.nodes[a.0].value.clone();
        y.scale(s);
        self.push(y, Op::Scale(a, s), &[a])
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = &self.nodes[a.0].value;
        Tensor { rows: av.rows, cols: av.cols, data: av.data.iter().map(|x| f(*x)).collect() }
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.map(a, sigmoid);
        self.push(y, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.map(a, f64::tanh);
        self.push(y, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.map(a, |x| x.max(0.0));
        self.push(y, Op::Relu(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of zero tensors".into()));
        };
        let n = self.shape(first)[0];
        let mut total = 0;
        for &p in parts {
            if self.shape(p)[0] != n {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
            total += self.shape(p)[1];
        }
        let mut y = Tensor::zeros(n, total);
        let mut off = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            for r in 0..n {
                y.data[r * total + off..r * total + off + pv.cols].copy_from_slice(pv.row(r));
            }
            off += pv.cols;
        }
        Ok(self.push(y, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c] = self.shape(a);
        if start + len > c {
            return Err(Error::Shape(format!("slice_cols {start}+{len} of {c}")));
        }
        let av = &self.nodes[a.0].value;
        let y = Tensor::from_fn(n, len, |r, j| av.data[r * c + start + j]);
        Ok(self.push(y, Op::SliceCols(a, start), &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of zero tensors".into()));
        };
        let c = self.shape(first)[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.shape(p)[1] != c {
                return Err(shape_err("concat_rows", self.shape(first), self.shape(p)));
            }
            data.extend_from_slice(&self.nodes[p.0].value.data);
            rows += self.shape(p)[0];
        }
        let y = Tensor { rows, cols: c, data };
        Ok(self.push(y, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c] = self.shape(a);
        if start + len > n {
            return Err(Error::Shape(format!("slice_rows {start}+{len} of {n}")));
        }
        let data = self.nodes[a.0].value.data[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor { rows: len, cols: c, data }, Op::SliceRows(a, start), &[a]))
    }

    /// `y[r] = a[index[r]]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let [n, c] = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("gather row {bad} of {n}")));
        }
        let av = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            data.extend_from_slice(av.row(i));
        }
        let y = Tensor { rows: index.len(), cols: c, data };
        Ok(self.push(y, Op::GatherRows(a, index), &[a]))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let y = self.nodes[a.0].value.clone().reshaped(rows, cols)?;
        Ok(self.push(y, Op::Reshape(a), &[a]))
    }

    /// Constant sparse matrix times `a`.
    pub fn spmm(&mut self, m: Arc<Sparse>, a: Var) -> Result<Var> {
        let y = m.matmul(&self.nodes[a.0].value)?;
        Ok(self.push(y, Op::SpMM(m, a), &[a]))
    }

    /// Per-row normalization over features, then `gain * x_hat + bias` (`gain`, `bias`: `[1, C]`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let [n, c] = self.shape(x);
        if c == 0 {
            return Err(Error::Shape("layer_norm over zero features".into()));
        }
        if self.shape(gain) != [1, c] || self.shape(bias) != [1, c] {
            return Err(shape_err("layer_norm affine", self.shape(gain), [1, c]));
        }
        let xv = &self.nodes[x.0].value;
        let (gv, bv) = (&self.nodes[gain.0].value.data, &self.nodes[bias.0].value.data);
        let mut xhat = vec![0.0; n * c];
        let mut inv_std = vec![0.0; n];
        let mut y = Tensor::zeros(n, c);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                y.data[r * c + j] = gv[j] * h + bv[j];
            }
        }
        Ok(self.push(y, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias]))
    }

    /// Rows flagged absent are replaced by the learnable `[1, C]` row `fill`.
    pub fn fill_missing(&mut self, x: Var, fill: Var, present: Arc<[bool]>) -> Result<Var> {
        let [n, c] = self.shape(x);
        if self.shape(fill) != [1, c] || present.len() != n {
            return Err(shape_err("fill_missing", self.shape(fill), [1, c]));
        }
        let mut y = self.nodes[x.0].value.clone();
        let fv = &self.nodes[fill.0].value.data;
        for (r, &p) in present.iter().enumerate() {
            if !p {
                y.data[r * c..(r + 1) * c].copy_from_slice(fv);
            }
        }
        Ok(self.push(y, Op::FillMissing { x, fill, present }, &[x, fill]))
    }

    /// One LSTM step from precomputed input projections.
    ///
    /// `gx: [n, 4H]` holds `x W_ih^T + b_ih + b_hh` with gate blocks `i, f, g, o`; `prev` is the
    /// previous `[h | c]` (`[n, 2H]`, zeros when `None`); `w_hh: [4H, H]`. Returns `[h | c]`.
    pub fn lstm_step(&mut self, gx: Var, prev: Option<Var>, w_hh: Var) -> Result<Var> {
        let [n, g4] = self.shape(gx);
        let [wr, hidden] = self.shape(w_hh);
        if g4 != 4 * hidden || wr != 4 * hidden {
            return Err(shape_err("lstm gates/recurrent weight", [n, g4], [wr, hidden]));
        }
        if let Some(p) = prev {
            if self.shape(p) != [n, 2 * hidden] {
                return Err(shape_err("lstm state", self.shape(p), [n, 2 * hidden]));
            }
        }
        let h2 = 2 * hidden;
        let mut act = self.nodes[gx.0].value.data.clone();
        if let Some(p) = prev {
            let pv = &self.nodes[p.0].value.data;
            let wv = &self.nodes[w_hh.0].value.data;
            gemm(n, hidden, g4, pv, h2, 1, wv, 1, hidden, 1.0, &mut act);
        }
        let mut out = Tensor::zeros(n, h2);
        let mut tanh_c = vec![0.0; n * hidden];
        for r in 0..n {
            let a = &mut act[r * g4..(r + 1) * g4];
            for j in 0..hidden {
                a[j] = sigmoid(a[j]);
                a[hidden + j] = sigmoid(a[hidden + j]);
                a[2 * hidden + j] = a[2 * hidden + j].tanh();
                a[3 * hidden + j] = sigmoid(a[3 * hidden + j]);
                let c_prev = prev.map_or(0.0, |p| self.nodes[p.0].value.data[r * h2 + hidden + j]);
                let c = a[hidden + j] * c_prev + a[j] * a[2 * hidden + j];
                let tc = c.tanh();
                tanh_c[r * hidden + j] = tc;
                out.data[r * h2 + j] = a[3 * hidden + j] * tc;
                out.data[r * h2 + hidden + j] = c;
            }
        }
        let mut inputs = vec![gx, w_hh];
        inputs.extend(prev);
        Ok(self.push(out, Op::LstmCell { gx, prev, w_hh, act, tanh_c }, &inputs))
    }

    /// Full LSTM cell: `(x, [h|c]) -> [h|c]` with `W_ih: [4H, in]`, biases `[1, 4H]`.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        prev: Option<Var>,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
    ) -> Result<Var> {
        let gx = self.linear(x, w_ih, Some(b_ih))?;
        let gx = self.add_row(gx, b_hh)?;
        self.lstm_step(gx, prev, w_hh)
    }

    /// Mean absolute error over entries whose target is not NaN; zero when all are NaN.
    pub fn masked_l1(&mut self, x: Var, target: Arc<[f64]>) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if target.len() != xv.len() {
            return Err(Error::Shape(format!("masked_l1: {} targets for {:?}", target.len(), xv.shape())));
        }
        let mut sum = 0.0;
        let mut count = 0;
        for (p, t) in xv.data.iter().zip(target.iter()) {
            if !t.is_nan() {
                sum += (p - t).abs();
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { sum / count as f64 };
        Ok(self.push(Tensor::scalar(loss), Op::MaskedL1 { x, target, count }, &[x]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Kernel-3, stride-3 convolution over node-major sequences.
    ///
    /// `x` stacks `steps` consecutive rows per node (`[nodes * steps, C]`); `W: [C', 3C]` with
    /// column `k * C + c` weighting channel `c` at tap `k`. Output is `[nodes * steps / 3, C']`.
    pub fn conv1d(&mut self, x: Var, steps: usize, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, c] = self.shape(x);
        if steps == 0 || !steps.is_multiple_of(3) {
            return Err(Error::InvalidArgument(format!("sequence length {steps} is not divisible by stride 3")));
        }
        if n % steps != 0 {
            return Err(Error::Shape(format!("{n} rows are not whole sequences of {steps}")));
        }
        if self.shape(w)[1] != 3 * c {
            return Err(shape_err("conv1d weight", self.shape(w), [self.shape(w)[0], 3 * c]));
        }
        let xr = self.reshape(x, n / 3, 3 * c)?;
        self.linear(xr, w, b)
    }

    /// `A_hat (X W^T)` with a precomputed normalized propagation matrix.
    pub fn gcn_conv(&mut self, adj: Arc<Sparse>, x: Var, w: Var) -> Result<Var> {
        if adj.cols() != self.shape(x)[0] || adj.rows() != adj.cols() {
            return Err(Error::Shape(format!("adjacency {}x{} for {} nodes", adj.rows(), adj.cols(), self.shape(x)[0])));
        }
        let xw = self.linear(x, w, None)?;
        self.spmm(adj, xw)
    }

    /// Reverse sweep from a `[1, 1]` output.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn slot<'a>(grads: &'a mut [Option<Tensor>], nodes: &[Node], v: Var) -> Option<&'a mut Tensor> {
            let node = &nodes[v.0];
            if !node.requires_grad {
                return None;
            }
            let [r, c] = node.value.shape();
            Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
        }

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Linear { x, w, b } => {
                    let [n, fout] = g.shape();
                    let xv = &nodes[x.0].value;
                    let fin = xv.cols;
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        gemm(n, fout, fin, &g.data, fout, 1, &nodes[w.0].value.data, fin, 1, 1.0, &mut dx.data);
                    }
                    if let Some(dw) = slot(&mut grads, nodes, *w) {
                        gemm(fout, n, fin, &g.data, 1, fout, &xv.data, fin, 1, 1.0, &mut dw.data);
                    }
                    if let Some(b) = b {
                        if let Some(db) = slot(&mut grads, nodes, *b) {
                            for row in g.data.chunks(fout) {
                                for (d, v) in db.data.iter_mut().zip(row) {
                                    *d += v;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        da.add_assign(&g);
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        db.add_assign(&g);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        da.add_assign(&g);
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        for (d, v) in db.data.iter_mut().zip(&g.data) {
                            *d -= v;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value.data, &nodes[b.0].value.data);
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for ((d, gv), o) in da.data.iter_mut().zip(&g.data).zip(bv) {
                            *d += gv * o;
                        }
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        for ((d, gv), o) in db.data.iter_mut().zip(&g.data).zip(av) {
                            *d += gv * o;
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        da.add_assign(&g);
                    }
                    if let Some(dr) = slot(&mut grads, nodes, *row) {
                        for r in g.data.chunks(g.cols.max(1)) {
                            for (d, v) in dr.data.iter_mut().zip(r) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for (d, v) in da.data.iter_mut().zip(&g.data) {
                            *d += s * v;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for ((d, gv), y) in da.data.iter_mut().zip(&g.data).zip(&node.value.data) {
                            *d += gv * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for ((d, gv), y) in da.data.iter_mut().zip(&g.data).zip(&node.value.data) {
                            *d += gv * (1.0 - y * y);
                        }
                    }
                }
                Op::Relu(a) => {
                    let av = &nodes[a.0].value.data;
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for ((d, gv), x) in da.data.iter_mut().zip(&g.data).zip(av) {
                            if *x > 0.0 {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols;
                    let mut off = 0;
                    for p in parts {
                        let pc = nodes[p.0].value.cols;
                        if let Some(dp) = slot(&mut grads, nodes, *p) {
                            for r in 0..g.rows {
                                let src = &g.data[r * total + off..r * total + off + pc];
                                for (d, v) in dp.data[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                    *d += v;
                                }
                            }
                        }
                        off += pc;
                    }
                }
                Op::SliceCols(a, start) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        let c = da.cols;
                        for r in 0..g.rows {
                            for (d, v) in da.data[r * c + start..r * c + start + g.cols].iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = nodes[p.0].value.data.len();
                        if let Some(dp) = slot(&mut grads, nodes, *p) {
                            for (d, v) in dp.data.iter_mut().zip(&g.data[off..off + len]) {
                                *d += v;
                            }
                        }
                        off += len;
                    }
                }
                Op::SliceRows(a, start) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        let c = da.cols;
                        for (d, v) in da.data[start * c..start * c + g.data.len()].iter_mut().zip(&g.data) {
                            *d += v;
                        }
                    }
                }
                Op::GatherRows(a, index) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        let c = da.cols;
                        for (r, &src) in index.iter().enumerate() {
                            for (d, v) in da.data[src * c..(src + 1) * c].iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::Reshape(a) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for (d, v) in da.data.iter_mut().zip(&g.data) {
                            *d += v;
                        }
                    }
                }
                Op::SpMM(m, a) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        m.matmul_transposed_into(&g, da);
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let c = g.cols;
                    let gv = &nodes[gain.0].value.data;
                    if let Some(dg) = slot(&mut grads, nodes, *gain) {
                        for (k, v) in g.data.iter().enumerate() {
                            dg.data[k % c] += v * xhat[k];
                        }
                    }
                    if let Some(db) = slot(&mut grads, nodes, *bias) {
                        for (k, v) in g.data.iter().enumerate() {
                            db.data[k % c] += v;
                        }
                    }
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        let cf = c as f64;
                        for r in 0..g.rows {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for j in 0..c {
                                let dh = g.data[r * c + j] * gv[j];
                                s1 += dh;
                                s2 += dh * xhat[r * c + j];
                            }
                            for j in 0..c {
                                let dh = g.data[r * c + j] * gv[j];
                                dx.data[r * c + j] += inv_std[r] / cf * (cf * dh - s1 - xhat[r * c + j] * s2);
                            }
                        }
                    }
                }
                Op::FillMissing { x, fill, present } => {
                    let c = g.cols;
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        for (r, &p) in present.iter().enumerate() {
                            if p {
                                for (d, v) in dx.data[r * c..(r + 1) * c].iter_mut().zip(g.row(r)) {
                                    *d += v;
                                }
                            }
                        }
                    }
                    if let Some(df) = slot(&mut grads, nodes, *fill) {
                        for (r, &p) in present.iter().enumerate() {
                            if !p {
                                for (d, v) in df.data.iter_mut().zip(g.row(r)) {
                                    *d += v;
                                }
                            }
                        }
                    }
                }
                Op::LstmCell { gx, prev, w_hh, act, tanh_c } => {
                    let hidden = nodes[w_hh.0].value.cols;
                    let (h2, g4) = (2 * hidden, 4 * hidden);
                    let n = g.rows;
                    let mut dpre = vec![0.0; n * g4];
                    let mut dc_prev = vec![0.0; n * hidden];
                    for r in 0..n {
                        let a = &act[r * g4..(r + 1) * g4];
                        for j in 0..hidden {
                            let (ig, fg, gg, og) = (a[j], a[hidden + j], a[2 * hidden + j], a[3 * hidden + j]);
                            let tc = tanh_c[r * hidden + j];
                            let c_prev = prev.map_or(0.0, |p| nodes[p.0].value.data[r * h2 + hidden + j]);
                            let dh = g.data[r * h2 + j];
                            let dc = g.data[r * h2 + hidden + j] + dh * og * (1.0 - tc * tc);
                            let d = &mut dpre[r * g4..(r + 1) * g4];
                            d[j] = dc * gg * ig * (1.0 - ig);
                            d[hidden + j] = dc * c_prev * fg * (1.0 - fg);
                            d[2 * hidden + j] = dc * ig * (1.0 - gg * gg);
                            d[3 * hidden + j] = dh * tc * og * (1.0 - og);
                            dc_prev[r * hidden + j] = dc * fg;
                        }
                    }
                    if let Some(dgx) = slot(&mut grads, nodes, *gx) {
                        for (d, v) in dgx.data.iter_mut().zip(&dpre) {
                            *d += v;
                        }
                    }
                    if let Some(p) = prev {
                        let pv = &nodes[p.0].value.data;
                        if let Some(dw) = slot(&mut grads, nodes, *w_hh) {
                            gemm(g4, n, hidden, &dpre, 1, g4, pv, h2, 1, 1.0, &mut dw.data);
                        }
                        if nodes[p.0].requires_grad {
                            let mut dh_prev = vec![0.0; n * hidden];
                            let wv = &nodes[w_hh.0].value.data;
                            gemm(n, g4, hidden, &dpre, g4, 1, wv, hidden, 1, 0.0, &mut dh_prev);
                            let dp = slot(&mut grads, nodes, *p).expect("requires grad");
                            for r in 0..n {
                                for j in 0..hidden {
                                    dp.data[r * h2 + j] += dh_prev[r * hidden + j];
                                    dp.data[r * h2 + hidden + j] += dc_prev[r * hidden + j];
                                }
                            }
                        }
                    }
                }
                Op::MaskedL1 { x, target, count } => {
                    if *count == 0 {
                        continue;
                    }
                    let scale = g.data[0] / *count as f64;
                    let xv = &nodes[x.0].value.data;
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        for ((d, p), t) in dx.data.iter_mut().zip(xv).zip(target.iter()) {
                            if !t.is_nan() {
                                let diff = p - t;
                                if diff > 0.0 {
                                    *d += scale;
                                } else if diff < 0.0 {
                                    *d -= scale;
                                }
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for d in &mut da.data {
                            *d += g.data[0];
                        }
                    }
                }
            }
        }
        Ok(Grads { grads })
    }
}
