//! Dense row-major tensors and a reverse-mode computation graph.
//!
//! Every graph value is a matrix (`rows × cols`; vectors are `1 × n`). Nodes
//! are appended in evaluation order, so a node's inputs always have smaller
//! ids and the reverse sweep is a single backward pass over the node list.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(skip)]
    pub grad: Option<Vec<f64>>,
    #[serde(skip, default = "yes")]
    pub requires_grad: bool,
}

fn yes() -> bool {
    true
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { shape, data, grad: None, requires_grad: false })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix {rows}×{cols} from {} values", data.len());
        Self { shape: vec![rows, cols], data, grad: None, requires_grad: false }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::matrix(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Self::matrix(1, 1, vec![v])
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension; rank-1 tensors are a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    Add(Var, Var),
    /// `a + 1·b` with `b` a single row broadcast down `a`.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Row-wise softmax.
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    SelectRow(Var, usize),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = ar.iter().zip(&b[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ (k×m)ᵀ · b` where `a` is `m×k` and `b` is `m×n`.
fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in out[p * n..(p + 1) * n].iter_mut().zip(&b[i * n..(i + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(s) => s.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// A trainable input. Its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        let t = Tensor::matrix(t.rows(), t.cols(), t.data);
        self.push(t, Op::Leaf, true)
    }

    /// A constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = Tensor::matrix(t.rows(), t.cols(), t.data);
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        assert_eq!(k, k2, "matmul {m}×{k} · {k2}×{n}");
        let data = matmul(&self.value(a).data, &self.value(b).data, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, data), Op::MatMul(a, b), rg)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        assert_eq!(k, k2, "matmul_bt {m}×{k} · ({n}×{k2})ᵀ");
        let data = matmul_bt(&self.value(a).data, &self.value(b).data, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, data), Op::MatMulBt(a, b), rg)
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (da, db) = (self.dims(a), self.dims(b));
        assert_eq!(da, db, "elementwise op on {da:?} and {db:?}");
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| f(*x, *y)).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(da.0, da.1, data), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let ((m, n), (one, n2)) = (self.dims(a), self.dims(bias));
        assert!(one == 1 && n == n2, "add_row {m}×{n} + {one}×{n2}");
        let b = &self.value(bias).data;
        let data = self.value(a).data.chunks(n).flat_map(|r| r.iter().zip(b).map(|(x, y)| x + y)).collect();
        let rg = self.rg(a) || self.rg(bias);
        self.push(Tensor::matrix(m, n, data), Op::AddRow(a, bias), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (m, n) = self.dims(a);
        let data = self.value(a).data.iter().map(|x| x * s).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, data), Op::Scale(a, s), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut data = self.value(a).data.clone();
        for row in data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, data), Op::Softmax(a), rg)
    }

    /// Per-row normalization to zero mean and unit variance, then `γ ⊙ x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (m, n) = self.dims(x);
        assert_eq!(self.dims(gamma), (1, n));
        assert_eq!(self.dims(beta), (1, n));
        let xs = &self.value(x).data;
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = g[c] * h + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(Tensor::matrix(m, n, out), Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let data = self
            .value(a)
            .data
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()))
            .collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, data), Op::Gelu(a), rg)
    }

    pub fn select_row(&mut self, a: Var, r: usize) -> Var {
        let (m, n) = self.dims(a);
        assert!(r < m, "row {r} of {m}");
        let data = self.value(a).row(r).to_vec();
        let rg = self.rg(a);
        self.push(Tensor::matrix(1, n, data), Op::SelectRow(a, r), rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let t = self.value(a);
        let data = (0..n).map(|c| (0..m).map(|r| t.at(r, c)).sum::<f64>() / m as f64).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(1, n, data), Op::MeanRows(a), rg)
    }

    /// Column-wise maximum; the first maximal row receives the gradient.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let t = self.value(a);
        let mut arg = vec![0; n];
        let mut data = vec![0.0; n];
        for c in 0..n {
            for r in 0..m {
                if r == 0 || t.at(r, c) > t.at(arg[c], c) {
                    arg[c] = r;
                }
            }
            data[c] = t.at(arg[c], c);
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(1, n, data), Op::MaxRows(a, arg), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| {
            let (r, c) = self.dims(p);
            assert_eq!(r, m, "concat_cols row mismatch");
            c
        }).collect();
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(m, n, data), Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.dims(a);
        assert!(start + len <= n, "slice {start}..{} of {n} columns", start + len);
        let t = self.value(a);
        let data = (0..m).flat_map(|r| t.row(r)[start..start + len].iter().copied()).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, len, data), Op::SliceCols(a, start), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.len(), rows * cols, "reshape of {} values to {rows}×{cols}", t.len());
        let data = t.data.clone();
        let rg = self.rg(a);
        self.push(Tensor::matrix(rows, cols, data), Op::Reshape(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self.nodes.get(loss.0).ok_or_else(|| Error::Graph("loss is not a node of this graph".into()))?;
        if node.value.len() != 1 {
            return Err(Error::Graph(format!("loss must be a scalar, got shape {:?}", node.value.shape)));
        }
        if !node.requires_grad {
            return Err(Error::Graph("loss does not depend on any trainable input".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(&node.op, &node.value, &dy, &mut grads);
            grads[id] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, y: &Tensor, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let want = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.dims(*a), self.dims(*b));
                if want(a) {
                    accumulate(&mut grads[a.0], &matmul_bt(dy, &self.value(*b).data, m, n, k));
                }
                if want(b) {
                    accumulate(&mut grads[b.0], &matmul_at(&self.value(*a).data, dy, m, k, n));
                }
            }
            Op::MatMulBt(a, b) => {
                let ((m, k), (n, _)) = (self.dims(*a), self.dims(*b));
                if want(a) {
                    accumulate(&mut grads[a.0], &matmul(dy, &self.value(*b).data, m, n, k));
                }
                if want(b) {
                    accumulate(&mut grads[b.0], &matmul_at(dy, &self.value(*a).data, m, n, k));
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if want(v) {
                        accumulate(&mut grads[v.0], dy);
                    }
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    accumulate(&mut grads[a.0], dy);
                }
                if want(b) {
                    let neg: Vec<f64> = dy.iter().map(|v| -v).collect();
                    accumulate(&mut grads[b.0], &neg);
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    let g: Vec<f64> = dy.iter().zip(&self.value(*b).data).map(|(d, x)| d * x).collect();
                    accumulate(&mut grads[a.0], &g);
                }
                if want(b) {
                    let g: Vec<f64> = dy.iter().zip(&self.value(*a).data).map(|(d, x)| d * x).collect();
                    accumulate(&mut grads[b.0], &g);
                }
            }
            Op::AddRow(a, bias) => {
                if want(a) {
                    accumulate(&mut grads[a.0], dy);
                }
                if want(bias) {
                    let n = y.cols();
                    let mut g = vec![0.0; n];
                    for row in dy.chunks(n) {
                        g.iter_mut().zip(row).for_each(|(s, d)| *s += d);
                    }
                    accumulate(&mut grads[bias.0], &g);
                }
            }
            Op::Scale(a, s) => {
                if want(a) {
                    let g: Vec<f64> = dy.iter().map(|d| d * s).collect();
                    accumulate(&mut grads[a.0], &g);
                }
            }
            Op::Softmax(a) => {
                if want(a) {
                    let n = y.cols();
                    let mut g = vec![0.0; dy.len()];
                    for ((gr, yr), dr) in g.chunks_mut(n).zip(y.data.chunks(n)).zip(dy.chunks(n)) {
                        let dot: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                        for c in 0..n {
                            gr[c] = yr[c] * (dr[c] - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], &g);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (m, n) = (y.rows(), y.cols());
                if want(gamma) {
                    let mut g = vec![0.0; n];
                    for (i, d) in dy.iter().enumerate() {
                        g[i % n] += d * xhat[i];
                    }
                    accumulate(&mut grads[gamma.0], &g);
                }
                if want(beta) {
                    let mut g = vec![0.0; n];
                    for (i, d) in dy.iter().enumerate() {
                        g[i % n] += d;
                    }
                    accumulate(&mut grads[beta.0], &g);
                }
                if want(x) {
                    let gam = &self.value(*gamma).data;
                    let mut g = vec![0.0; m * n];
                    for r in 0..m {
                        let dxhat: Vec<f64> = (0..n).map(|c| dy[r * n + c] * gam[c]).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().enumerate().map(|(c, d)| d * xhat[r * n + c]).sum();
                        for c in 0..n {
                            g[r * n + c] = rstd[r] / n as f64 * (n as f64 * dxhat[c] - s1 - xhat[r * n + c] * s2);
                        }
                    }
                    accumulate(&mut grads[x.0], &g);
                }
            }
            Op::Gelu(a) => {
                if want(a) {
                    let g: Vec<f64> = self
                        .value(*a)
                        .data
                        .iter()
                        .zip(dy)
                        .map(|(&x, d)| {
                            let th = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                            let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                            d * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)
                        })
                        .collect();
                    accumulate(&mut grads[a.0], &g);
                }
            }
            Op::SelectRow(a, r) => {
                if want(a) {
                    let (m, n) = self.dims(*a);
                    let mut g = vec![0.0; m * n];
                    g[r * n..(r + 1) * n].copy_from_slice(dy);
                    accumulate(&mut grads[a.0], &g);
                }
            }
            Op::MeanRows(a) => {
                if want(a) {
                    let (m, n) = self.dims(*a);
                    let g: Vec<f64> = (0..m * n).map(|i| dy[i % n] / m as f64).collect();
                    accumulate(&mut grads[a.0], &g);
                }
            }
            Op::MaxRows(a, arg) => {
                if want(a) {
                    let (m, n) = self.dims(*a);
                    let mut g = vec![0.0; m * n];
                    for c in 0..n {
                        g[arg[c] * n + c] = dy[c];
                    }
                    accumulate(&mut grads[a.0], &g);
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (y.rows(), y.cols());
                let mut offset = 0;
                for p in parts {
                    let w = self.dims(*p).1;
                    if want(p) {
                        let g: Vec<f64> = (0..m).flat_map(|r| dy[r * n + offset..r * n + offset + w].iter().copied()).collect();
                        accumulate(&mut grads[p.0], &g);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                if want(a) {
                    let (m, n) = self.dims(*a);
                    let w = y.cols();
                    let mut g = vec![0.0; m * n];
                    for r in 0..m {
                        g[r * n + start..r * n + start + w].copy_from_slice(&dy[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut grads[a.0], &g);
                }
            }
            Op::Reshape(a) => {
                if want(a) {
                    accumulate(&mut grads[a.0], dy);
                }
            }
            Op::Sum(a) => {
                if want(a) {
                    let g = vec![dy[0]; self.value(*a).len()];
                    accumulate(&mut grads[a.0], &g);
                }
            }
        }
    }
}
