//! Analytic-vs-finite-difference gradient comparison.

use visuomotor::numerics::{Graph, Rng, Tensor, Var};

pub const FD_STEP: f64 = 1e-3;

pub struct Input {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Input {
    /// Uniform in `[-1, 1]`, kept at least `margin` away from zero.
    pub fn random(shape: &[usize], rng: &mut Rng, margin: f64) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let v = rng.uniform(-1.0, 1.0);
                let v = if v.abs() < margin { margin.copysign(v) + v } else { v };
                // Round through f32 so both routes see identical inputs.
                v as f32 as f64
            })
            .collect();
        Self { shape: shape.to_vec(), data }
    }
}

/// Max over elements of `|analytic − numeric| / max(|analytic|, |numeric|, 1e-3)`
/// for the scalar `Σ wᵢ·fᵢ(inputs)`, where `build` records `f` on the graph
/// and `reference` evaluates it in 64-bit.
pub fn max_relative_error(
    inputs: &[Input],
    rng: &mut Rng,
    build: impl Fn(&mut Graph, &[Var]) -> Var,
    reference: impl Fn(&[Vec<f64>]) -> Vec<f64>,
) -> f64 {
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs
        .iter()
        .map(|i| g.leaf(Tensor::new(&i.shape, i.data.iter().map(|&v| v as f32).collect()).unwrap()))
        .collect();
    let out = build(&mut g, &leaves);
    let n_out = g.value(out).numel();
    let weights: Vec<f64> = (0..n_out).map(|_| rng.uniform(-1.0, 1.0) as f32 as f64).collect();
    let shape = g.shape(out).to_vec();
    let w = g.input(Tensor::new(&shape, weights.iter().map(|&v| v as f32).collect()).unwrap());
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum(prod).unwrap();
    g.backward(loss).unwrap();

    let objective = |vals: &[Vec<f64>]| -> f64 {
        reference(vals).iter().zip(&weights).map(|(a, b)| a * b).sum()
    };
    let base: Vec<Vec<f64>> = inputs.iter().map(|i| i.data.clone()).collect();
    let mut worst: f64 = 0.0;
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = g.grad(*leaf).expect("leaf gradient").to_vec();
        for j in 0..base[k].len() {
            let mut plus = base.clone();
            plus[k][j] += FD_STEP;
            let mut minus = base.clone();
            minus[k][j] -= FD_STEP;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * FD_STEP);
            let a = analytic[j] as f64;
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

use super::oracles;
use visuomotor::numerics::Activation;

fn dims(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

pub fn dense_case(rng: &mut Rng) -> f64 {
    let (b, i, o) = (dims(rng, 1, 4), dims(rng, 1, 6), dims(rng, 1, 5));
    let inputs = [Input::random(&[b, i], rng, 0.0), Input::random(&[i, o], rng, 0.0), Input::random(&[o], rng, 0.0)];
    max_relative_error(
        &inputs,
        rng,
        |g, v| g.dense(v[0], v[1], v[2]).unwrap(),
        |x| oracles::dense(&x[0], &x[1], &x[2], b, i, o),
    )
}

pub fn conv_case(rng: &mut Rng) -> f64 {
    let (b, c, f) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 3));
    let k = [1, 2, 3][rng.below(3)];
    let (stride, pad) = (dims(rng, 1, 2), rng.below(2));
    let (h, w) = (dims(rng, k.max(2), 6), dims(rng, k.max(2), 6));
    let inputs = [Input::random(&[b, c, h, w], rng, 0.0), Input::random(&[f, c, k, k], rng, 0.0)];
    max_relative_error(
        &inputs,
        rng,
        |g, v| g.conv2d(v[0], v[1], stride, pad).unwrap(),
        |x| oracles::conv2d(&x[0], &x[1], (b, c, h, w), (f, k), stride, pad).0,
    )
}

pub fn conv_transpose_case(rng: &mut Rng) -> f64 {
    let (b, c, f) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 3));
    let k = [2, 3, 4][rng.below(3)];
    let stride = dims(rng, 1, 2);
    let pad = rng.below(2).min(k / 2);
    let (h, w) = (dims(rng, 2, 4), dims(rng, 2, 4));
    let inputs = [Input::random(&[b, c, h, w], rng, 0.0), Input::random(&[c, f, k, k], rng, 0.0)];
    max_relative_error(
        &inputs,
        rng,
        |g, v| g.conv_transpose2d(v[0], v[1], stride, pad).unwrap(),
        |x| oracles::conv_transpose2d(&x[0], &x[1], (b, c, h, w), (f, k), stride, pad).0,
    )
}

pub fn activation_case(kind: Activation, rng: &mut Rng) -> f64 {
    let n = dims(rng, 1, 12);
    // Keep inputs clear of the relu kink so the central difference is valid.
    let inputs = [Input::random(&[2, n], rng, 0.05)];
    let f: fn(f64) -> f64 = match kind {
        Activation::Relu => oracles::relu,
        Activation::LeakyRelu => oracles::leaky_relu,
        Activation::Tanh => f64::tanh,
        Activation::Sigmoid => oracles::sigmoid,
    };
    max_relative_error(&inputs, rng, |g, v| g.activation(v[0], kind).unwrap(), |x| x[0].iter().map(|&v| f(v)).collect())
}

pub fn kl_case(rng: &mut Rng) -> f64 {
    let (b, n) = (dims(rng, 1, 4), dims(rng, 1, 10));
    let inputs = [Input::random(&[b, n], rng, 0.0), Input::random(&[b, n], rng, 0.0)];
    max_relative_error(
        &inputs,
        rng,
        |g, v| g.gaussian_kl(v[0], v[1]).unwrap(),
        |x| vec![oracles::kl_logvar(&x[0], &x[1], b)],
    )
}

pub fn reparameterize_case(rng: &mut Rng) -> f64 {
    let (b, n) = (dims(rng, 1, 4), dims(rng, 1, 10));
    let inputs = [Input::random(&[b, n], rng, 0.0), Input::random(&[b, n], rng, 0.0)];
    let eps: Vec<f64> = (0..b * n).map(|_| rng.normal() as f32 as f64).collect();
    let eps32: Vec<f32> = eps.iter().map(|&e| e as f32).collect();
    max_relative_error(
        &inputs,
        rng,
        |g, v| g.reparameterize(v[0], v[1], eps32.clone()).unwrap(),
        |x| x[0].iter().zip(&x[1]).zip(&eps).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect(),
    )
}

/// Every differentiable layer kind with its random-instance checker.
pub fn layer_cases() -> Vec<(&'static str, Box<dyn Fn(&mut Rng) -> f64>)> {
    vec![
        ("dense", Box::new(dense_case)),
        ("conv2d", Box::new(conv_case)),
        ("conv_transpose2d", Box::new(conv_transpose_case)),
        ("relu", Box::new(|r: &mut Rng| activation_case(Activation::Relu, r))),
        ("leaky_relu", Box::new(|r: &mut Rng| activation_case(Activation::LeakyRelu, r))),
        ("tanh", Box::new(|r: &mut Rng| activation_case(Activation::Tanh, r))),
        ("sigmoid", Box::new(|r: &mut Rng| activation_case(Activation::Sigmoid, r))),
        ("gaussian_kl", Box::new(kl_case)),
        ("reparameterize", Box::new(reparameterize_case)),
    ]
}
