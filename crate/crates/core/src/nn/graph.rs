use std::collections::BTreeMap;

use super::params::{Grads, ParamStore};
use super::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    RepeatRows(Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    MeanPool(Var),
    MaxPool(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    tracks: bool,
}

/// A reverse-mode tape. Nodes are appended in evaluation order, so the node
/// index is already a topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    frozen: bool,
}

/// Result of [`Graph::backward`]: one optional gradient per node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros_like(like))
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::invalid(format!(
        "{op}: incompatible shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose parameters bind as constants; nothing on it tracks
    /// gradients.
    pub fn frozen() -> Self {
        Self {
            frozen: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracks: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numeric(format!("non-finite value produced by {op:?}")));
        }
        self.nodes.push(Node { value, op, tracks });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].tracks
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf that takes no gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    /// Binds parameter `name` from `store`; repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))?
            .clone();
        let v = if self.frozen { self.constant(t)? } else { self.input(t)? };
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Same value as `x`, cut off from the gradient flow.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).clone();
        self.push(v, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = va.dims2()?;
        let (k2, n) = vb.dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", va, vb));
        }
        let out = Tensor::matrix(m, n, matmul_raw(va.data(), vb.data(), m, k, n))?;
        let tr = self.tracks(a) || self.tracks(b);
        self.push(out, Op::MatMul(a, b), tr)
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(shape_err(name, va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let tr = self.tracks(a) || self.tracks(b);
        self.push(out, op, tr)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x (n x d) + row (1 x d)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (vx, vr) = (self.value(x), self.value(row));
        let (n, d) = vx.dims2()?;
        if vr.dims2()? != (1, d) {
            return Err(shape_err("add_row", vx, vr));
        }
        let mut out = vx.clone();
        for i in 0..n {
            for (o, &b) in out.data_mut()[i * d..(i + 1) * d].iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        let tr = self.tracks(x) || self.tracks(row);
        self.push(out, Op::AddRow(x, row), tr)
    }

    /// Tiles a `1 x d` row into `n x d`.
    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        let vr = self.value(row);
        let (r, d) = vr.dims2()?;
        if r != 1 || n == 0 {
            return Err(Error::invalid(format!(
                "repeat_rows expects a single row and n >= 1, got shape {:?}, n = {n}",
                vr.shape()
            )));
        }
        let data = vr.data().repeat(n);
        let out = Tensor::matrix(n, d, data)?;
        let tr = self.tracks(row);
        self.push(out, Op::RepeatRows(row), tr)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        let tr = self.tracks(x);
        self.push(out, Op::Scale(x, s), tr)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        let tr = self.tracks(x);
        self.push(out, Op::Relu(x), tr)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(gelu);
        let tr = self.tracks(x);
        self.push(out, Op::Gelu(x), tr)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, d) = vx.dims2()?;
        let mut out = vx.clone();
        for i in 0..n {
            let row = &mut out.data_mut()[i * d..(i + 1) * d];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let tr = self.tracks(x);
        self.push(out, Op::SoftmaxRows(x), tr)
    }

    /// Row-wise layer normalization with a learned `1 x d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, d) = vx.dims2()?;
        let (vg, vb) = (self.value(gain), self.value(bias));
        if vg.dims2()? != (1, d) || vb.dims2()? != (1, d) {
            return Err(shape_err("layer_norm", vx, vg));
        }
        let mut normalized = Tensor::zeros(n, d);
        let mut out = Tensor::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = vx.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                normalized.data_mut()[i * d + j] = h;
                out.data_mut()[i * d + j] = h * vg.data()[j] + vb.data()[j];
            }
        }
        let tr = self.tracks(x) || self.tracks(gain) || self.tracks(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            tr,
        )
    }

    /// Column means: `n x d -> 1 x d`.
    pub fn mean_pool(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, d) = vx.dims2()?;
        if n == 0 {
            return Err(Error::invalid("mean_pool over zero rows"));
        }
        let mut out = vec![0.0; d];
        for i in 0..n {
            for (o, &v) in out.iter_mut().zip(vx.row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        let t = Tensor::matrix(1, d, out)?;
        let tr = self.tracks(x);
        self.push(t, Op::MeanPool(x), tr)
    }

    /// Column maxima: `n x d -> 1 x d`; ties resolve to the lowest row.
    pub fn max_pool(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, d) = vx.dims2()?;
        if n == 0 {
            return Err(Error::invalid("max_pool over zero rows"));
        }
        let mut arg = vec![0usize; d];
        let mut out = vx.row(0).to_vec();
        for i in 1..n {
            for (j, &v) in vx.row(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        let t = Tensor::matrix(1, d, out)?;
        let tr = self.tracks(x);
        self.push(t, Op::MaxPool(x, arg), tr)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols needs at least one input"))?;
        let n = self.value(*first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != n {
                return Err(shape_err("concat_cols", self.value(*first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(n, total, data)?;
        let tr = parts.iter().any(|&p| self.tracks(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), tr)
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let (n, d) = vx.dims2()?;
        if start + len > d || len == 0 {
            return Err(Error::invalid(format!(
                "slice_cols {start}..{} out of range for width {d}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&vx.row(i)[start..start + len]);
        }
        let out = Tensor::matrix(n, len, data)?;
        let tr = self.tracks(x);
        self.push(out, Op::SliceCols(x, start), tr)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.value(x).dims2()?;
        let out = self.value(x).transpose();
        let tr = self.tracks(x);
        self.push(out, Op::Transpose(x), tr)
    }

    /// `out[i] = x[indices[i]]`.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (n, d) = vx.dims2()?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!("gather_rows index {bad} out of range for {n} rows")));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(vx.row(i));
        }
        let out = Tensor::matrix(indices.len(), d, data)?;
        let tr = self.tracks(x);
        self.push(out, Op::GatherRows(x, indices.to_vec()), tr)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let tr = self.tracks(x);
        self.push(Tensor::scalar(s), Op::Sum(x), tr)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.is_empty() {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let s = vx.data().iter().sum::<f64>() / vx.len() as f64;
        let tr = self.tracks(x);
        self.push(Tensor::scalar(s), Op::Mean(x), tr)
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(
            self.value(root).rows(),
            self.value(root).cols(),
            1.0,
        ));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracks {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.tracks(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.rows(), va.cols());
                let n = vb.cols();
                if self.tracks(*a) {
                    let da = matmul_nt_raw(g.data(), vb.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).expect("shape"));
                }
                if self.tracks(*b) {
                    let db = matmul_tn_raw(va.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.tracks(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d).expect("shape"));
                }
                if self.tracks(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(g.shape().to_vec(), d).expect("shape"));
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.tracks(*row) {
                    self.accumulate(grads, *row, column_sums(g));
                }
            }
            Op::RepeatRows(row) => self.accumulate(grads, *row, column_sums(g)),
            Op::Scale(x, s) => self.accumulate(grads, *x, g.map(|v| v * s)),
            Op::Relu(x) => {
                let vx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d).expect("shape"));
            }
            Op::Gelu(x) => {
                let vx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(&gv, &xv)| gv * gelu_grad(xv))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d).expect("shape"));
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let (n, d) = (y.rows(), y.cols());
                let mut dx = Tensor::zeros(n, d);
                for i in 0..n {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx.data_mut()[i * d + j] = yr[j] * (gr[j] - s);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let (n, d) = (normalized.rows(), normalized.cols());
                let vg = self.value(*gain);
                if self.tracks(*x) {
                    let mut dx = Tensor::zeros(n, d);
                    for i in 0..n {
                        let h = normalized.row(i);
                        let gr = g.row(i);
                        let dh: Vec<f64> = (0..d).map(|j| gr[j] * vg.data()[j]).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dx.data_mut()[i * d + j] =
                                inv_std[i] / d as f64 * (d as f64 * dh[j] - sum_dh - h[j] * sum_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.tracks(*gain) {
                    let mut dg = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            dg[j] += g.at(i, j) * normalized.at(i, j);
                        }
                    }
                    self.accumulate(grads, *gain, Tensor::matrix(1, d, dg).expect("shape"));
                }
                if self.tracks(*bias) {
                    self.accumulate(grads, *bias, column_sums(g));
                }
            }
            Op::MeanPool(x) => {
                let vx = self.value(*x);
                let (n, d) = (vx.rows(), vx.cols());
                let scaled: Vec<f64> = g.data().iter().map(|v| v / n as f64).collect();
                let data = scaled.repeat(n);
                self.accumulate(grads, *x, Tensor::matrix(n, d, data).expect("shape"));
            }
            Op::MaxPool(x, arg) => {
                let vx = self.value(*x);
                let (n, d) = (vx.rows(), vx.cols());
                let mut dx = Tensor::zeros(n, d);
                for (j, &i) in arg.iter().enumerate() {
                    dx.data_mut()[i * d + j] += g.data()[j];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.tracks(p) {
                        let mut data = Vec::with_capacity(n * w);
                        for i in 0..n {
                            data.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(n, w, data).expect("shape"));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let vx = self.value(*x);
                let (n, d) = (vx.rows(), vx.cols());
                let w = g.cols();
                let mut dx = Tensor::zeros(n, d);
                for i in 0..n {
                    dx.data_mut()[i * d + start..i * d + start + w].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose()),
            Op::GatherRows(x, idx) => {
                let vx = self.value(*x);
                let (n, d) = (vx.rows(), vx.cols());
                let mut dx = Tensor::zeros(n, d);
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in dx.data_mut()[i * d..(i + 1) * d].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let vx = self.value(*x);
                let gv = g.item();
                self.accumulate(grads, *x, vx.map(|_| gv));
            }
            Op::Mean(x) => {
                let vx = self.value(*x);
                let gv = g.item() / vx.len() as f64;
                self.accumulate(grads, *x, vx.map(|_| gv));
            }
        }
    }

    /// Gradients for every parameter of `store`, zero where a parameter was not
    /// bound or not reached.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> Grads {
        let mut out = Grads::zeros_like(store);
        for (name, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                out.set(name, g.clone());
            }
        }
        out
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let (n, d) = (g.rows(), g.cols());
    let mut out = vec![0.0; d];
    for i in 0..n {
        for (o, &v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Tensor::matrix(1, d, out).expect("shape")
}
