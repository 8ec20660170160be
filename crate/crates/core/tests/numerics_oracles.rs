mod common;

use common::gradcheck::{self, Input};
use common::oracles;
use proptest::prelude::*;
use visuomotor::numerics::{
    adam_step, gaussian_kl, gaussian_kl_grad, AdamConfig, Activation, Graph, LatentDistribution, ParameterStore, Rng,
    Tensor,
};
use visuomotor::Error;

fn t(shape: &[usize], data: &[f32]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn dense_identity_and_bias_shift() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 2], &[1.0, 2.0]));
    let w = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b0 = g.input(t(&[2], &[0.0, 0.0]));
    let y = g.dense(x, w, b0).unwrap();
    assert_eq!(g.data(y), &[1.0, 2.0]);

    let x1 = g.input(t(&[1, 2], &[1.0, 1.0]));
    let b = g.input(t(&[2], &[3.0, 4.0]));
    let y = g.dense(x1, w, b).unwrap();
    assert_eq!(g.data(y), &[4.0, 5.0]);
}

#[test]
fn dense_matches_triple_loop() {
    let mut rng = Rng::new(3, 0);
    let x = Input::random(&[2, 3], &mut rng, 0.0);
    let w = Input::random(&[3, 2], &mut rng, 0.0);
    let bias = [0.25, -0.5];
    let want = oracles::dense(&x.data, &w.data, &bias, 2, 3, 2);
    let mut g = Graph::new();
    let xv = g.input(t(&[2, 3], &x.data.iter().map(|&v| v as f32).collect::<Vec<_>>()));
    let wv = g.input(t(&[3, 2], &w.data.iter().map(|&v| v as f32).collect::<Vec<_>>()));
    let bv = g.input(t(&[2], &[0.25, -0.5]));
    let y = g.dense(xv, wv, bv).unwrap();
    for (a, b) in g.data(y).iter().zip(&want) {
        assert!((*a as f64 - b).abs() < 1e-6);
    }
}

#[test]
fn dense_shape_mismatch_is_config_error() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 3]));
    let w = g.input(Tensor::zeros(&[2, 2]));
    let b = g.input(Tensor::zeros(&[2]));
    assert!(matches!(g.dense(x, w, b), Err(Error::Config(_))));
}

#[test]
fn conv_identity_kernel_and_constant_field() {
    let mut g = Graph::new();
    let data: Vec<f32> = (0..16).map(|i| i as f32).collect();
    let x = g.input(t(&[1, 1, 4, 4], &data));
    let k = g.input(t(&[1, 1, 1, 1], &[1.0]));
    let y = g.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(g.data(y), data.as_slice());

    let ones = g.input(Tensor::full(&[1, 1, 5, 5], 1.0));
    let k3 = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(ones, k3, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 3, 3]);
    assert!(g.data(y).iter().all(|&v| v == 9.0));
}

#[test]
fn conv_matches_direct_summation() {
    let mut rng = Rng::new(4, 0);
    let x = Input::random(&[1, 2, 6, 6], &mut rng, 0.0);
    let k = Input::random(&[3, 2, 3, 3], &mut rng, 0.0);
    let (want, ho, wo) = oracles::conv2d(&x.data, &k.data, (1, 2, 6, 6), (3, 3), 2, 1);
    assert_eq!((ho, wo), (3, 3));
    let mut g = Graph::new();
    let xv = g.input(Tensor::new(&x.shape, x.data.iter().map(|&v| v as f32).collect()).unwrap());
    let kv = g.input(Tensor::new(&k.shape, k.data.iter().map(|&v| v as f32).collect()).unwrap());
    let y = g.conv2d(xv, kv, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 3, 3, 3]);
    for (a, b) in g.data(y).iter().zip(&want) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
}

#[test]
fn conv_non_positive_extent_is_config_error() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 1, 2, 2]));
    let k = g.input(Tensor::zeros(&[1, 1, 5, 5]));
    assert!(matches!(g.conv2d(x, k, 1, 0), Err(Error::Config(_))));
    assert!(matches!(g.conv_transpose2d(x, k, 1, 4), Err(Error::Config(_))));
}

#[test]
fn transpose_conv_identity_and_impulse_scatter() {
    let mut g = Graph::new();
    let data: Vec<f32> = (0..9).map(|i| i as f32 - 4.0).collect();
    let x = g.input(t(&[1, 1, 3, 3], &data));
    let k = g.input(t(&[1, 1, 1, 1], &[1.0]));
    let y = g.conv_transpose2d(x, k, 1, 0).unwrap();
    assert_eq!(g.data(y), data.as_slice());

    // Ones input, 2×2 kernel with an impulse at (0, 1), stride 2: every input
    // pixel lands on its own 2×2 tile at the impulse offset.
    let ones = g.input(Tensor::full(&[1, 1, 2, 2], 1.0));
    let imp = g.input(t(&[1, 1, 2, 2], &[0.0, 1.0, 0.0, 0.0]));
    let y = g.conv_transpose2d(ones, imp, 2, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 4, 4]);
    let (want, _, _) = oracles::conv_transpose2d(&[1.0; 4], &[0.0, 1.0, 0.0, 0.0], (1, 1, 2, 2), (1, 2), 2, 0);
    let got: Vec<f64> = g.data(y).iter().map(|&v| v as f64).collect();
    assert_eq!(got, want);
    let hot: Vec<usize> = got.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
    assert_eq!(hot, vec![1, 3, 9, 11]);
}

#[test]
fn conv_and_transpose_conv_are_adjoint() {
    let mut rng = Rng::new(21, 0);
    for _ in 0..20 {
        let (c, f) = (1 + rng.below(3), 1 + rng.below(3));
        let k = [1, 3, 4][rng.below(3)];
        let (stride, pad) = (1 + rng.below(2), rng.below(2));
        let (h, w) = (k + 2 + rng.below(4), k + 2 + rng.below(4));
        // Pick sizes where the correlation tiles the input exactly so that
        // transpose_conv2d maps back onto the same extent.
        if (h + 2 * pad - k) % stride != 0 || (w + 2 * pad - k) % stride != 0 {
            continue;
        }
        let x = Input::random(&[1, c, h, w], &mut rng, 0.0);
        let kern = Input::random(&[f, c, k, k], &mut rng, 0.0);
        let mut g = Graph::new();
        let xv = g.input(Tensor::new(&x.shape, x.data.iter().map(|&v| v as f32).collect()).unwrap());
        let kv = g.input(Tensor::new(&kern.shape, kern.data.iter().map(|&v| v as f32).collect()).unwrap());
        let cx = g.conv2d(xv, kv, stride, pad).unwrap();
        let y = Input::random(g.shape(cx), &mut rng, 0.0);
        let yv = g.input(Tensor::new(&y.shape, y.data.iter().map(|&v| v as f32).collect()).unwrap());
        // conv kernel F×C×k×k reads as a C'=F → F'=C transpose kernel.
        let ty = g.conv_transpose2d(yv, kv, stride, pad).unwrap();
        assert_eq!(g.shape(ty), x.shape.as_slice());
        let lhs: f64 = g.data(cx).iter().zip(&y.data).map(|(a, b)| *a as f64 * b).sum();
        let rhs: f64 = x.data.iter().zip(g.data(ty)).map(|(a, b)| a * *b as f64).sum();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
        assert!(rel < 1e-5, "adjoint mismatch {rel}");
    }
}

#[test]
fn activation_values() {
    let mut g = Graph::new();
    let x = g.input(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = g.activation(x, Activation::Relu).unwrap();
    assert_eq!(g.data(r), &[0.0, 0.0, 2.0]);
    let z = g.input(Tensor::scalar(0.0));
    let th = g.activation(z, Activation::Tanh).unwrap();
    assert_eq!(g.data(th), &[0.0]);
    let m = g.input(Tensor::scalar(-2.0));
    let l = g.activation(m, Activation::LeakyRelu).unwrap();
    assert!((g.data(l)[0] + 0.02).abs() < 1e-7);
}

#[test]
fn relu_gradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1], &[0.0]));
    let y = g.activation(x, Activation::Relu).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0]);
}

#[test]
fn backward_sum_and_square() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::full(&[2, 3], 0.3));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_on_non_scalar_is_usage_error() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[3]));
    assert!(matches!(g.backward(x), Err(Error::Usage(_))));
}

#[test]
fn non_finite_forward_is_hard_error() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(f32::MAX));
    assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite(_))));
}

#[test]
fn every_layer_matches_finite_differences() {
    let mut rng = Rng::new(77, 0);
    for (name, case) in gradcheck::layer_cases() {
        for _ in 0..5 {
            let err = case(&mut rng);
            assert!(err < 1e-3, "{name}: relative error {err}");
        }
    }
}

#[test]
fn structural_ops_match_finite_differences() {
    let mut rng = Rng::new(78, 0);
    let inputs = [Input::random(&[2, 5], &mut rng, 0.0), Input::random(&[2, 3], &mut rng, 0.0)];
    let err = gradcheck::max_relative_error(
        &inputs,
        &mut rng,
        |g, v| {
            let a = g.slice_cols(v[0], 1, 3).unwrap();
            let p = g.add(a, v[1]).unwrap();
            let c = g.concat_cols(&[p, v[0]]).unwrap();
            let c = g.clamp(c, -0.9, 0.9).unwrap();
            g.scale(c, 1.5).unwrap()
        },
        |x| {
            let mut out = Vec::new();
            for b in 0..2 {
                for j in 0..3 {
                    out.push(x[0][b * 5 + 1 + j] + x[1][b * 3 + j]);
                }
                out.extend_from_slice(&x[0][b * 5..b * 5 + 5]);
            }
            out.iter().map(|v| 1.5 * v.clamp(-0.9, 0.9)).collect()
        },
    );
    // Clamp kinks can land inside the finite-difference stencil only if a
    // value sits within 1e-3 of ±0.9; the random draw above avoids that.
    assert!(err < 1e-3, "{err}");

    let input = [Input::random(&[1, 2, 3, 3], &mut rng, 0.0), Input::random(&[2], &mut rng, 0.0)];
    let err = gradcheck::max_relative_error(
        &input,
        &mut rng,
        |g, v| g.channel_bias(v[0], v[1]).unwrap(),
        |x| x[0].iter().enumerate().map(|(i, v)| v + x[1][i / 9]).collect(),
    );
    assert!(err < 1e-3);

    let input = [Input::random(&[3, 4], &mut rng, 0.0)];
    let target: Vec<f32> = (0..12).map(|i| i as f32 / 12.0).collect();
    let tgt = target.clone();
    let err = gradcheck::max_relative_error(
        &input,
        &mut rng,
        |g, v| g.mse(v[0], &tgt).unwrap(),
        |x| vec![x[0].iter().zip(&target).map(|(a, b)| (a - *b as f64).powi(2)).sum::<f64>() / 12.0],
    );
    assert!(err < 1e-3);
}

#[test]
fn kl_matches_quadrature() {
    let d = LatentDistribution::new(vec![0.3], vec![0.7]).unwrap();
    assert!((gaussian_kl(&d) - oracles::kl_quadrature(0.3, 0.7)).abs() < 1e-5);
}

#[test]
fn kl_grad_matches_finite_differences() {
    let (mu, sigma) = (0.4f64, 1.3f64);
    let d = LatentDistribution::new(vec![mu as f32], vec![sigma as f32]).unwrap();
    let (dmu, dsigma) = gaussian_kl_grad(&d);
    let h = 1e-4;
    let f = |m: f64, s: f64| 0.5 * (m * m + s * s - 1.0 - (s * s).ln());
    let n_mu = (f(mu + h, sigma) - f(mu - h, sigma)) / (2.0 * h);
    let n_s = (f(mu, sigma + h) - f(mu, sigma - h)) / (2.0 * h);
    assert!((dmu[0] - n_mu).abs() < 1e-6);
    assert!((dsigma[0] - n_s).abs() < 1e-4);
}

proptest! {
    #[test]
    fn kl_is_non_negative(mu in proptest::collection::vec(-5.0f32..5.0, 1..12), s in 0.05f32..4.0) {
        let n = mu.len();
        let d = LatentDistribution::new(mu, vec![s; n]).unwrap();
        prop_assert!(gaussian_kl(&d) >= -1e-9);
    }
}

fn toy_training_run(seed: u64) -> ParameterStore {
    let mut rng = Rng::new(seed, 0);
    let mut store = ParameterStore::new();
    store.insert_kaiming("w", &[3, 2], 3, &mut rng).unwrap();
    store.insert_zeros("b", &[2]).unwrap();
    for step in 0..50 {
        let mut g = Graph::new();
        let x: Vec<f32> = (0..12).map(|i| ((i + step) as f32 * 0.37).sin()).collect();
        let xv = g.input(Tensor::new(&[4, 3], x).unwrap());
        let w = g.param(&store, "w").unwrap();
        let b = g.param(&store, "b").unwrap();
        let y = g.dense(xv, w, b).unwrap();
        let y = g.activation(y, Activation::Tanh).unwrap();
        let loss = g.mse(y, &[0.5; 8]).unwrap();
        g.backward(loss).unwrap();
        g.export_param_grads(&mut store).unwrap();
        adam_step(&mut store, &AdamConfig::default());
    }
    store
}

#[test]
fn parameter_trajectories_are_bit_identical() {
    assert_eq!(toy_training_run(5), toy_training_run(5));
    assert_ne!(toy_training_run(5), toy_training_run(6));
}
