//! Independent 64-bit reference implementations. Nothing in here calls into
//! the library's numeric kernels.

pub fn dense(x: &[f64], w: &[f64], b: &[f64], batch: usize, inner: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    for i in 0..batch {
        for o in 0..out {
            let mut acc = b[o];
            for p in 0..inner {
                acc += x[i * inner + p] * w[p * out + o];
            }
            y[i * out + o] = acc;
        }
    }
    y
}

/// Direct six-loop cross-correlation with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    k: &[f64],
    (batch, channels, h, w): (usize, usize, usize, usize),
    (filters, ks): (usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - ks) / stride + 1;
    let wo = (w + 2 * pad - ks) / stride + 1;
    let mut y = vec![0.0; batch * filters * ho * wo];
    for b in 0..batch {
        for f in 0..filters {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..channels {
                        for ki in 0..ks {
                            for kj in 0..ks {
                                let iy = (oy * stride + ki) as isize - pad as isize;
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((b * channels + c) * h + iy as usize) * w + ix as usize]
                                    * k[((f * channels + c) * ks + ki) * ks + kj];
                            }
                        }
                    }
                    y[((b * filters + f) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (y, ho, wo)
}

/// Transpose convolution as a scatter-add of each input pixel times the
/// kernel into the (cropped) output.
pub fn conv_transpose2d(
    x: &[f64],
    k: &[f64],
    (batch, channels, h, w): (usize, usize, usize, usize),
    (filters, ks): (usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h - 1) * stride + ks - 2 * pad;
    let wo = (w - 1) * stride + ks - 2 * pad;
    let mut y = vec![0.0; batch * filters * ho * wo];
    for b in 0..batch {
        for c in 0..channels {
            for iy in 0..h {
                for ix in 0..w {
                    let v = x[((b * channels + c) * h + iy) * w + ix];
                    for f in 0..filters {
                        for ki in 0..ks {
                            for kj in 0..ks {
                                let oy = (iy * stride + ki) as isize - pad as isize;
                                let ox = (ix * stride + kj) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= ho as isize || ox >= wo as isize {
                                    continue;
                                }
                                y[((b * filters + f) * ho + oy as usize) * wo + ox as usize] +=
                                    v * k[((c * filters + f) * ks + ki) * ks + kj];
                            }
                        }
                    }
                }
            }
        }
    }
    (y, ho, wo)
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.01 * x
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Batch-mean of per-sample KL(N(μ, e^{lv}) ‖ N(0, 1)).
pub fn kl_logvar(mu: &[f64], logvar: &[f64], batch: usize) -> f64 {
    mu.iter().zip(logvar).map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv)).sum::<f64>() / batch as f64
}

/// `∫ q(z) ln(q(z)/p(z)) dz` for `q = N(μ, σ²)`, `p = N(0, 1)` by composite
/// Simpson quadrature over `μ ± 14σ`.
pub fn kl_quadrature(mu: f64, sigma: f64) -> f64 {
    let norm = |z: f64, m: f64, s: f64| {
        (-(z - m) * (z - m) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    };
    let log_ratio = |z: f64| {
        // ln q − ln p, written out to avoid underflow of the densities.
        -(z - mu) * (z - mu) / (2.0 * sigma * sigma) - sigma.ln() + z * z / 2.0
    };
    let (a, b) = (mu - 14.0 * sigma, mu + 14.0 * sigma);
    let n = 20_000;
    let h = (b - a) / n as f64;
    let f = |z: f64| norm(z, mu, sigma) * log_ratio(z);
    let mut s = f(a) + f(b);
    for i in 1..n {
        let z = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(z);
    }
    s * h / 3.0
}
