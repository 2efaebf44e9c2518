//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates adjoints.
//! Only the operations the models need are provided; every one of them is
//! checked against central finite differences in the tests below.

use crate::error::{Error, Result};

/// Sentinel gather index that reads as zero (used for convolution padding).
pub const ZERO_INDEX: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} values",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(vec![], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the innermost dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        self.len() / self.last_dim().max(1)
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        rstd: Vec<f64>,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    MeanRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let shape = x.shape.clone();
        self.push(Tensor::new(shape, data), Op::Add(a, b))
    }

    /// `a[.., n] + b[n]` broadcast over leading dimensions.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (x, bias) = (self.value(a), self.value(b));
        let n = x.last_dim();
        assert_eq!(bias.len(), n, "bias length mismatch");
        let mut data = x.data.clone();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(&bias.data).for_each(|(v, b)| *v += b);
        }
        let shape = x.shape.clone();
        self.push(Tensor::new(shape, data), Op::AddBias(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let shape = x.shape.clone();
        self.push(Tensor::new(shape, data), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape.clone(), x.data.iter().map(|v| v * s).collect());
        self.push(t, Op::Scale(a, s))
    }

    /// `a[.., k] · w[k, n]`.
    pub fn matmul(&mut self, a: Var, w: Var) -> Var {
        let (x, wt) = (self.value(a), self.value(w));
        assert_eq!(wt.shape.len(), 2, "matmul weight must be 2-D");
        let (k, n) = (wt.shape[0], wt.shape[1]);
        assert_eq!(x.last_dim(), k, "matmul inner dimension mismatch");
        let rows = x.rows();
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let xr = &x.data[r * k..(r + 1) * k];
            let or = &mut out[r * n..(r + 1) * n];
            for (kk, &a) in xr.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, &wt.data[kk * n..(kk + 1) * n], or);
                }
            }
        }
        let mut shape = x.shape.clone();
        *shape.last_mut().unwrap() = n;
        self.push(Tensor::new(shape, out), Op::MatMul(a, w))
    }

    /// Batched product of `a[B, M, K]` with `b[B, K, N]`, or with `b[B, N, K]`
    /// transposed when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape.len(), 3);
        assert_eq!(y.shape.len(), 3);
        let (bs, m, k) = (x.shape[0], x.shape[1], x.shape[2]);
        assert_eq!(y.shape[0], bs, "bmm batch mismatch");
        let n = if trans_b { y.shape[1] } else { y.shape[2] };
        assert_eq!(
            if trans_b { y.shape[2] } else { y.shape[1] },
            k,
            "bmm inner mismatch"
        );
        let mut out = vec![0.0; bs * m * n];
        for bi in 0..bs {
            let xa = &x.data[bi * m * k..(bi + 1) * m * k];
            let yb = &y.data[bi * k * n..(bi + 1) * k * n];
            let ob = &mut out[bi * m * n..(bi + 1) * m * n];
            for mi in 0..m {
                let xr = &xa[mi * k..(mi + 1) * k];
                let or = &mut ob[mi * n..(mi + 1) * n];
                if trans_b {
                    for (ni, o) in or.iter_mut().enumerate() {
                        *o = dot(xr, &yb[ni * k..(ni + 1) * k]);
                    }
                } else {
                    for (ki, &a) in xr.iter().enumerate() {
                        axpy(a, &yb[ki * n..(ki + 1) * n], or);
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![bs, m, n], out),
            Op::BatchMatMul { a, b, trans_b },
        )
    }

    /// Tanh-approximated GELU. Smooth everywhere, which keeps finite
    /// difference checks free of kink artefacts.
    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x
            .data
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let shape = x.shape.clone();
        self.push(Tensor::new(shape, data), Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|&v| sigmoid(v)).collect();
        let shape = x.shape.clone();
        self.push(Tensor::new(shape, data), Op::Sigmoid(a))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.last_dim();
        let mut data = x.data.clone();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let shape = x.shape.clone();
        self.push(Tensor::new(shape, data), Op::Softmax(a))
    }

    /// Layer normalisation over the last dimension with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (t, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let n = t.last_dim();
        assert_eq!(g.len(), n);
        assert_eq!(b.len(), n);
        let mut data = t.data.clone();
        let mut rstd = Vec::with_capacity(t.rows());
        for row in data.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * r * g.data[j] + b.data[j];
            }
            rstd.push(r);
        }
        let shape = t.shape.clone();
        self.push(
            Tensor::new(shape, data),
            Op::LayerNorm {
                x,
                gain,
                bias,
                rstd,
            },
        )
    }

    /// `out[i] = x[index[i]]` (flat indexing), reshaped to `shape`.
    /// [`ZERO_INDEX`] entries read as zero.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Var {
        let src = &self.value(x).data;
        let data = index
            .iter()
            .map(|&i| if i == ZERO_INDEX { 0.0 } else { src[i] })
            .collect();
        self.push(Tensor::new(shape, data), Op::Gather { x, index })
    }

    /// Flat concatenation of all inputs into a 1-D tensor.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let n = data.len();
        self.push(Tensor::new(vec![n], data), Op::Concat(parts.to_vec()))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let data = self.value(x).data.clone();
        self.push(Tensor::new(shape, data), Op::Reshape(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean over all leading dimensions: `[.., c] -> [c]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.last_dim();
        let rows = t.rows();
        let mut out = vec![0.0; c];
        for row in t.data.chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        self.push(Tensor::new(vec![c], out), Op::MeanRows(x))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let v = self.value(root);
        if v.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                v.shape
            )));
        }
        self.backward_with_seed(root, &[1.0])
    }

    /// Backpropagates an explicit adjoint `seed` (same size as `root`).
    pub fn backward_with_seed(&self, root: Var, seed: &[f64]) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != seed.len() {
            return Err(Error::Contract(format!(
                "seed has {} values, root has {}",
                seed.len(),
                rv.len()
            )));
        }
        if rv.data.iter().chain(seed).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("loss or seed is not finite".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed.to_vec());
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, out.len(), |ga| axpy(1.0, g, ga));
                acc(grads, *b, out.len(), |gb| axpy(1.0, g, gb));
            }
            Op::AddBias(a, b) => {
                acc(grads, *a, out.len(), |ga| axpy(1.0, g, ga));
                let n = out.last_dim();
                acc(grads, *b, n, |gb| {
                    for row in g.chunks(n) {
                        axpy(1.0, row, gb);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (x, y) = (&self.value(*a).data, &self.value(*b).data);
                acc(grads, *a, out.len(), |ga| {
                    ga.iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(o, (g, y))| *o += g * y)
                });
                acc(grads, *b, out.len(), |gb| {
                    gb.iter_mut()
                        .zip(g.iter().zip(x))
                        .for_each(|(o, (g, x))| *o += g * x)
                });
            }
            Op::Scale(a, s) => acc(grads, *a, out.len(), |ga| axpy(*s, g, ga)),
            Op::MatMul(a, w) => {
                let (x, wt) = (self.value(*a), self.value(*w));
                let (k, n) = (wt.shape[0], wt.shape[1]);
                let rows = x.rows();
                acc(grads, *a, x.len(), |ga| {
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        for kk in 0..k {
                            ga[r * k + kk] += dot(gr, &wt.data[kk * n..(kk + 1) * n]);
                        }
                    }
                });
                acc(grads, *w, wt.len(), |gw| {
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        for kk in 0..k {
                            let a = x.data[r * k + kk];
                            if a != 0.0 {
                                axpy(a, gr, &mut gw[kk * n..(kk + 1) * n]);
                            }
                        }
                    }
                });
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (x.shape[0], x.shape[1], x.shape[2]);
                let n = out.shape[2];
                acc(grads, *a, x.len(), |ga| {
                    for bi in 0..bs {
                        let yb = &y.data[bi * k * n..(bi + 1) * k * n];
                        for mi in 0..m {
                            let gr = &g[(bi * m + mi) * n..(bi * m + mi + 1) * n];
                            let gar = &mut ga[(bi * m + mi) * k..(bi * m + mi + 1) * k];
                            if *trans_b {
                                for (ni, &gv) in gr.iter().enumerate() {
                                    axpy(gv, &yb[ni * k..(ni + 1) * k], gar);
                                }
                            } else {
                                for (ki, o) in gar.iter_mut().enumerate() {
                                    *o += dot(gr, &yb[ki * n..(ki + 1) * n]);
                                }
                            }
                        }
                    }
                });
                acc(grads, *b, y.len(), |gb| {
                    for bi in 0..bs {
                        let xa = &x.data[bi * m * k..(bi + 1) * m * k];
                        let gbb = &mut gb[bi * k * n..(bi + 1) * k * n];
                        for mi in 0..m {
                            let gr = &g[(bi * m + mi) * n..(bi * m + mi + 1) * n];
                            let xr = &xa[mi * k..(mi + 1) * k];
                            if *trans_b {
                                for (ni, &gv) in gr.iter().enumerate() {
                                    axpy(gv, xr, &mut gbb[ni * k..(ni + 1) * k]);
                                }
                            } else {
                                for (ki, &xv) in xr.iter().enumerate() {
                                    axpy(xv, gr, &mut gbb[ki * n..(ki + 1) * n]);
                                }
                            }
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let x = &self.value(*a).data;
                acc(grads, *a, x.len(), |ga| {
                    for ((o, &gv), &v) in ga.iter_mut().zip(g).zip(x) {
                        let th = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let d = 0.5 * (1.0 + th)
                            + 0.5 * v * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *o += gv * d;
                    }
                });
            }
            Op::Sigmoid(a) => acc(grads, *a, out.len(), |ga| {
                for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(&out.data) {
                    *o += gv * y * (1.0 - y);
                }
            }),
            Op::Softmax(a) => {
                let n = out.last_dim();
                acc(grads, *a, out.len(), |ga| {
                    for ((gar, gr), yr) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.data.chunks(n))
                    {
                        let s = dot(gr, yr);
                        for ((o, &gv), &y) in gar.iter_mut().zip(gr).zip(yr) {
                            *o += y * (gv - s);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                rstd,
            } => {
                let xt = self.value(*x);
                let gn = &self.value(*gain).data;
                let n = xt.last_dim();
                // recompute normalised inputs
                let xhat: Vec<f64> = xt
                    .data
                    .chunks(n)
                    .zip(rstd)
                    .flat_map(|(row, &r)| {
                        let mean = row.iter().sum::<f64>() / n as f64;
                        row.iter().map(move |v| (v - mean) * r)
                    })
                    .collect();
                acc(grads, *bias, n, |gb| {
                    for row in g.chunks(n) {
                        axpy(1.0, row, gb);
                    }
                });
                acc(grads, *gain, n, |gg| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(grads, *x, xt.len(), |gx| {
                    for (((gxr, gr), hr), &r) in gx
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(xhat.chunks(n))
                        .zip(rstd)
                    {
                        let gh: Vec<f64> = gr.iter().zip(gn).map(|(a, b)| a * b).collect();
                        let m1 = gh.iter().sum::<f64>() / n as f64;
                        let m2 = dot(&gh, hr) / n as f64;
                        for j in 0..n {
                            gxr[j] += r * (gh[j] - m1 - hr[j] * m2);
                        }
                    }
                });
            }
            Op::Gather { x, index } => {
                let len = self.value(*x).len();
                acc(grads, *x, len, |gx| {
                    for (&i, &gv) in index.iter().zip(g) {
                        if i != ZERO_INDEX {
                            gx[i] += gv;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(grads, p, len, |gp| axpy(1.0, &g[offset..offset + len], gp));
                    offset += len;
                }
            }
            Op::Reshape(x) => acc(grads, *x, out.len(), |gx| axpy(1.0, g, gx)),
            Op::Sum(x) => {
                let len = self.value(*x).len();
                acc(grads, *x, len, |gx| gx.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::MeanRows(x) => {
                let xt = self.value(*x);
                let c = xt.last_dim();
                let inv = 1.0 / xt.rows() as f64;
                acc(grads, *x, xt.len(), |gx| {
                    for row in gx.chunks_mut(c) {
                        axpy(inv, g, row);
                    }
                });
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, with zeros when the root does not depend on it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}
