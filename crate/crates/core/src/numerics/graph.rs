//! Reverse-mode automatic differentiation over a recorded op list.
//!
//! A [`Graph`] is built fresh for every forward pass. Ops append nodes that
//! own their output [`Tensor`]; [`Graph::backward`] walks the list in reverse
//! and leaves `∂loss/∂node` in each node's gradient buffer. Parameters are
//! copied in from a [`ParameterStore`] and their gradients copied back out
//! with [`Graph::export_param_grads`].

use super::kernels::{col2im, gemm, im2col, ConvGeom};
use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

pub const LEAKY_SLOPE: f32 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative given the input `x` and the output `y`. Zero at the relu kink.
    fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param { name: String },
    Dense { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, k: Var, stride: usize, pad: usize },
    ChannelBias { x: Var, b: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Act { x: Var, kind: Activation },
    Reshape(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Mse { pred: Var, target: Vec<f32> },
    Clamp { x: Var, lo: f32, hi: f32 },
    GaussianKl { mu: Var, logvar: Var },
    Reparameterize { mu: Var, logvar: Var, eps: Vec<f32> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param { .. } => vec![],
            Op::Dense { x, w, b } => vec![*x, *w, *b],
            Op::Conv2d { x, k, .. } | Op::ConvTranspose2d { x, k, .. } => vec![*x, *k],
            Op::ChannelBias { x, b } => vec![*x, *b],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Act { x, .. }
            | Op::Reshape(x)
            | Op::SliceCols { x, .. }
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Clamp { x, .. } => vec![*x],
            Op::ConcatCols(xs) => xs.clone(),
            Op::Mse { pred, .. } => vec![*pred],
            Op::GaussianKl { mu, logvar } | Op::Reparameterize { mu, logvar, .. } => {
                vec![*mu, *logvar]
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::config(format!("{op}: {detail}"))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        value.ensure_finite(name)?;
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Free leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Trainable parameter copied from `store`.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        let mut value = store.get(name)?.clone();
        value.zero_grad();
        self.nodes.push(Node { value, op: Op::Param { name: name.to_string() }, requires_grad: true });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Parameter used as a constant (frozen feature extractors).
    pub fn frozen(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        let mut value = store.get(name)?.clone();
        value.zero_grad();
        Ok(self.input(value))
    }

    /// `x·w + b` for `x: B×I`, `w: I×O`, `b: O`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(shape_err("dense", format!("input {xs:?}, weights {ws:?}, bias {bs:?}")));
        }
        let (batch, inner, out) = (xs[0], xs[1], ws[1]);
        let mut y = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            y.extend_from_slice(self.data(b));
        }
        gemm(batch, inner, out, self.data(x), false, self.data(w), false, &mut y, 1.0);
        self.push(Tensor::new(&[batch, out], y)?, Op::Dense { x, w, b }, "dense")
    }

    /// Zero-padded strided cross-correlation, `x: B×C×H×W`, `k: F×C×k×k`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 || ks[1] != xs[1] || ks[2] != ks[3] {
            return Err(shape_err("conv2d", format!("input {xs:?}, kernel {ks:?}")));
        }
        let geom = ConvGeom::new(xs[1], xs[2], xs[3], ks[2], stride, pad).ok_or_else(|| {
            shape_err("conv2d", format!("non-positive output extent for input {xs:?}, kernel {ks:?}, stride {stride}, pad {pad}"))
        })?;
        let (batch, filters) = (xs[0], ks[0]);
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let mut col = vec![0.0; rows * cols];
        let mut y = vec![0.0; batch * filters * cols];
        let (xd, kd) = (self.data(x), self.data(k));
        for bi in 0..batch {
            im2col(&geom, &xd[bi * geom.image_len()..(bi + 1) * geom.image_len()], &mut col);
            let out = &mut y[bi * filters * cols..(bi + 1) * filters * cols];
            gemm(filters, rows, cols, kd, false, &col, false, out, 0.0);
        }
        let shape = [batch, filters, geom.out_h, geom.out_w];
        self.push(Tensor::new(&shape, y)?, Op::Conv2d { x, k, stride, pad }, "conv2d")
    }

    /// Adjoint of [`Graph::conv2d`], `x: B×C×H×W`, `k: C×F×k×k`, output
    /// extent `(H−1)·stride − 2·pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 || ks[0] != xs[1] || ks[2] != ks[3] || stride == 0 {
            return Err(shape_err("conv_transpose2d", format!("input {xs:?}, kernel {ks:?}")));
        }
        let geom = transpose_geom(&xs, &ks, stride, pad).ok_or_else(|| {
            shape_err("conv_transpose2d", format!("non-positive output extent for input {xs:?}, kernel {ks:?}, stride {stride}, pad {pad}"))
        })?;
        let (batch, channels) = (xs[0], xs[1]);
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let mut col = vec![0.0; rows * cols];
        let mut y = vec![0.0; batch * geom.image_len()];
        let (xd, kd) = (self.data(x), self.data(k));
        for bi in 0..batch {
            let xb = &xd[bi * channels * cols..(bi + 1) * channels * cols];
            gemm(rows, channels, cols, kd, true, xb, false, &mut col, 0.0);
            col2im(&geom, &col, &mut y[bi * geom.image_len()..(bi + 1) * geom.image_len()]);
        }
        let shape = [batch, geom.channels, geom.height, geom.width];
        self.push(Tensor::new(&shape, y)?, Op::ConvTranspose2d { x, k, stride, pad }, "conv_transpose2d")
    }

    /// Adds a per-channel bias to `x: B×C×H×W`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if xs.len() != 4 || bs != [xs[1]] {
            return Err(shape_err("channel_bias", format!("input {xs:?}, bias {bs:?}")));
        }
        let plane = xs[2] * xs[3];
        let bd = self.data(b);
        let y: Vec<f32> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[(i / plane) % xs[1]])
            .collect();
        self.push(Tensor::new(&xs, y)?, Op::ChannelBias { x, b }, "channel_bias")
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let y = self.data(a).iter().zip(self.data(b)).map(|(p, q)| p + q).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(&shape, y)?, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let y = self.data(a).iter().zip(self.data(b)).map(|(p, q)| p * q).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(&shape, y)?, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        let y = self.data(x).iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(&shape, y)?, Op::Scale(x, s), "scale")
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let y = self.data(x).iter().map(|&v| kind.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(&shape, y)?, Op::Act { x, kind }, "activation")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        self.push(value, Op::Reshape(x), "reshape")
    }

    /// Columns `start..start+len` of a `B×C` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || len == 0 || start + len > xs[1] {
            return Err(shape_err("slice_cols", format!("columns {start}..{} of {xs:?}", start + len)));
        }
        let d = self.data(x);
        let mut y = Vec::with_capacity(xs[0] * len);
        for row in d.chunks(xs[1]) {
            y.extend_from_slice(&row[start..start + len]);
        }
        self.push(Tensor::new(&[xs[0], len], y)?, Op::SliceCols { x, start }, "slice_cols")
    }

    /// Side-by-side concatenation of `B×Cᵢ` matrices.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(shape_err("concat_cols", "no inputs".into()));
        }
        let batch = self.shape(xs[0])[0];
        let mut width = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != 2 || s[0] != batch {
                return Err(shape_err("concat_cols", format!("incompatible part {s:?}")));
            }
            width += s[1];
        }
        let mut y = Vec::with_capacity(batch * width);
        for b in 0..batch {
            for &v in xs {
                let c = self.shape(v)[1];
                y.extend_from_slice(&self.data(v)[b * c..(b + 1) * c]);
            }
        }
        self.push(Tensor::new(&[batch, width], y)?, Op::ConcatCols(xs.to_vec()), "concat_cols")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().map(|&v| v as f64).sum::<f64>() as f32;
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.data(x).iter().map(|&v| v as f64).sum::<f64>() / n;
        self.push(Tensor::scalar(s as f32), Op::Mean(x), "mean")
    }

    /// Mean squared error against a constant target of the same length.
    pub fn mse(&mut self, pred: Var, target: &[f32]) -> Result<Var> {
        if self.value(pred).numel() != target.len() {
            return Err(shape_err("mse", format!("prediction {:?} vs target length {}", self.shape(pred), target.len())));
        }
        let n = target.len() as f64;
        let s: f64 = self
            .data(pred)
            .iter()
            .zip(target)
            .map(|(p, t)| ((p - t) as f64).powi(2))
            .sum();
        self.push(Tensor::scalar((s / n) as f32), Op::Mse { pred, target: target.to_vec() }, "mse")
    }

    /// Elementwise clamp; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Result<Var> {
        let y = self.data(x).iter().map(|v| v.clamp(lo, hi)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(&shape, y)?, Op::Clamp { x, lo, hi }, "clamp")
    }

    /// KL(N(μ, e^{logvar}) ‖ N(0, I)) summed over latent dims, averaged over
    /// the batch. `mu`, `logvar`: `B×N`.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        self.same_shape("gaussian_kl", mu, logvar)?;
        let batch = self.shape(mu)[0] as f64;
        let s: f64 = self
            .data(mu)
            .iter()
            .zip(self.data(logvar))
            .map(|(&m, &lv)| {
                let (m, lv) = (m as f64, lv as f64);
                0.5 * (m * m + lv.exp() - 1.0 - lv)
            })
            .sum();
        self.push(Tensor::scalar((s / batch) as f32), Op::GaussianKl { mu, logvar }, "gaussian_kl")
    }

    /// `z = μ + exp(½·logvar)·ε` with `ε` supplied by the caller.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, eps: Vec<f32>) -> Result<Var> {
        self.same_shape("reparameterize", mu, logvar)?;
        if eps.len() != self.value(mu).numel() {
            return Err(shape_err("reparameterize", "noise length differs from mu".into()));
        }
        let y = self
            .data(mu)
            .iter()
            .zip(self.data(logvar))
            .zip(&eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        let shape = self.shape(mu).to_vec();
        self.push(Tensor::new(&shape, y)?, Op::Reparameterize { mu, logvar, eps }, "reparameterize")
    }

    /// Populates `∂loss/∂v` for every node that depends on a leaf or
    /// parameter requiring gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                if let Some(g) = &g {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("backward".into()));
                    }
                }
                node.value.set_grad(g);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f32])| {
            if !self.wants(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Dense { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (batch, inner, out) = (xs[0], xs[1], ws[1]);
                acc(*x, &mut |dx| gemm(batch, out, inner, g, false, self.data(*w), true, dx, 1.0));
                acc(*w, &mut |dw| gemm(inner, batch, out, self.data(*x), true, g, false, dw, 1.0));
                acc(*b, &mut |db| {
                    for row in g.chunks(out) {
                        db.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                });
            }
            Op::Conv2d { x, k, stride, pad } => {
                let (xs, ks) = (self.shape(*x), self.shape(*k));
                let geom = ConvGeom::new(xs[1], xs[2], xs[3], ks[2], *stride, *pad).unwrap();
                let (batch, filters) = (xs[0], ks[0]);
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let mut col = vec![0.0; rows * cols];
                let xd = self.data(*x);
                let kd = self.data(*k);
                let need_x = self.wants(*x);
                let mut dk = vec![0.0; filters * rows];
                let mut dx = if need_x { vec![0.0; xd.len()] } else { Vec::new() };
                for bi in 0..batch {
                    let gb = &g[bi * filters * cols..(bi + 1) * filters * cols];
                    let xb = &xd[bi * geom.image_len()..(bi + 1) * geom.image_len()];
                    im2col(&geom, xb, &mut col);
                    gemm(filters, cols, rows, gb, false, &col, true, &mut dk, 1.0);
                    if need_x {
                        gemm(rows, filters, cols, kd, true, gb, false, &mut col, 0.0);
                        col2im(&geom, &col, &mut dx[bi * geom.image_len()..(bi + 1) * geom.image_len()]);
                    }
                }
                acc(*k, &mut |d| d.iter_mut().zip(&dk).for_each(|(a, v)| *a += v));
                if need_x {
                    acc(*x, &mut |d| d.iter_mut().zip(&dx).for_each(|(a, v)| *a += v));
                }
            }
            Op::ConvTranspose2d { x, k, stride, pad } => {
                let (xs, ks) = (self.shape(*x), self.shape(*k));
                let geom = transpose_geom(xs, ks, *stride, *pad).unwrap();
                let (batch, channels) = (xs[0], xs[1]);
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let mut col = vec![0.0; rows * cols];
                let xd = self.data(*x);
                let kd = self.data(*k);
                let need_x = self.wants(*x);
                let mut dk = vec![0.0; channels * rows];
                let mut dx = if need_x { vec![0.0; xd.len()] } else { Vec::new() };
                for bi in 0..batch {
                    let gb = &g[bi * geom.image_len()..(bi + 1) * geom.image_len()];
                    im2col(&geom, gb, &mut col);
                    let xb = &xd[bi * channels * cols..(bi + 1) * channels * cols];
                    gemm(channels, cols, rows, xb, false, &col, true, &mut dk, 1.0);
                    if need_x {
                        let dxb = &mut dx[bi * channels * cols..(bi + 1) * channels * cols];
                        gemm(channels, rows, cols, kd, false, &col, false, dxb, 0.0);
                    }
                }
                acc(*k, &mut |d| d.iter_mut().zip(&dk).for_each(|(a, v)| *a += v));
                if need_x {
                    acc(*x, &mut |d| d.iter_mut().zip(&dx).for_each(|(a, v)| *a += v));
                }
            }
            Op::ChannelBias { x, b } => {
                let xs = self.shape(*x);
                let (channels, plane) = (xs[1], xs[2] * xs[3]);
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(a, v)| *a += v));
                acc(*b, &mut |d| {
                    for (i, chunk) in g.chunks(plane).enumerate() {
                        d[i % channels] += chunk.iter().sum::<f32>();
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(p, v)| *p += v));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(p, v)| *p += v));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |d| {
                    for ((p, v), q) in d.iter_mut().zip(g).zip(bd) {
                        *p += v * q;
                    }
                });
                acc(*b, &mut |d| {
                    for ((p, v), q) in d.iter_mut().zip(g).zip(ad) {
                        *p += v * q;
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(p, v)| *p += v * s)),
            Op::Act { x, kind } => {
                let (xd, yd) = (self.data(*x), node.value.data());
                acc(*x, &mut |d| {
                    for (((p, v), xi), yi) in d.iter_mut().zip(g).zip(xd).zip(yd) {
                        *p += v * kind.derivative(*xi, *yi);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(p, v)| *p += v)),
            Op::SliceCols { x, start } => {
                let width = self.shape(*x)[1];
                let len = node.value.shape()[1];
                acc(*x, &mut |d| {
                    for (row, grow) in d.chunks_mut(width).zip(g.chunks(len)) {
                        row[*start..start + len].iter_mut().zip(grow).for_each(|(p, v)| *p += v);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let width = node.value.shape()[1];
                let mut offset = 0;
                for &v in parts {
                    let c = self.shape(v)[1];
                    acc(v, &mut |d| {
                        for (row, grow) in d.chunks_mut(c).zip(g.chunks(width)) {
                            row.iter_mut().zip(&grow[offset..offset + c]).for_each(|(p, q)| *p += q);
                        }
                    });
                    offset += c;
                }
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|p| *p += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f32;
                acc(*x, &mut |d| d.iter_mut().for_each(|p| *p += g[0] / n));
            }
            Op::Mse { pred, target } => {
                let scale = 2.0 * g[0] / target.len() as f32;
                let pd = self.data(*pred);
                acc(*pred, &mut |d| {
                    for ((p, y), t) in d.iter_mut().zip(pd).zip(target) {
                        *p += scale * (y - t);
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xd = self.data(*x);
                acc(*x, &mut |d| {
                    for ((p, v), xi) in d.iter_mut().zip(g).zip(xd) {
                        if *xi > *lo && *xi < *hi {
                            *p += v;
                        }
                    }
                });
            }
            Op::GaussianKl { mu, logvar } => {
                let batch = self.shape(*mu)[0] as f32;
                let (md, ld) = (self.data(*mu), self.data(*logvar));
                acc(*mu, &mut |d| d.iter_mut().zip(md).for_each(|(p, m)| *p += g[0] * m / batch));
                acc(*logvar, &mut |d| {
                    d.iter_mut().zip(ld).for_each(|(p, lv)| *p += g[0] * 0.5 * (lv.exp() - 1.0) / batch)
                });
            }
            Op::Reparameterize { mu, logvar, eps } => {
                let ld = self.data(*logvar);
                acc(*mu, &mut |d| d.iter_mut().zip(g).for_each(|(p, v)| *p += v));
                acc(*logvar, &mut |d| {
                    for (((p, v), lv), e) in d.iter_mut().zip(g).zip(ld).zip(eps) {
                        *p += v * e * 0.5 * (0.5 * lv).exp();
                    }
                });
            }
        }
    }

    /// Adds the gradients of every trainable parameter node into `store`.
    pub fn export_param_grads(&self, store: &mut ParameterStore) -> Result<()> {
        for node in &self.nodes {
            if let (Op::Param { name }, Some(g)) = (&node.op, node.value.grad()) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}

/// Geometry of the correlation whose adjoint a transpose convolution is: the
/// transpose-conv output plays the role of the correlation input.
fn transpose_geom(xs: &[usize], ks: &[usize], stride: usize, pad: usize) -> Option<ConvGeom> {
    let k = ks[2];
    let out_h = ((xs[2] - 1) * stride + k).checked_sub(2 * pad)?;
    let out_w = ((xs[3] - 1) * stride + k).checked_sub(2 * pad)?;
    if out_h == 0 || out_w == 0 {
        return None;
    }
    let geom = ConvGeom::new(ks[1], out_h, out_w, k, stride, pad)?;
    (geom.out_h == xs[2] && geom.out_w == xs[3]).then_some(geom)
}
