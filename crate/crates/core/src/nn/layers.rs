//! Layer graph with explicit forward caches and hand-written backward passes.

use super::tensor::{gemm, Tensor4};

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Running statistics in normalization layers.
    Eval,
}

/// Indices refer to parameter groups of the owning encoder.
#[derive(Clone, Debug)]
pub enum Layer {
    /// Stride-1 convolution with `k/2` zero padding and no bias.
    Conv {
        weight: usize,
        cin: usize,
        cout: usize,
        k: usize,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        running_mean: usize,
        running_var: usize,
        channels: usize,
    },
    Relu,
    /// 2×2 max pooling, stride 2, ceil mode (a trailing odd row/column forms
    /// its own window), so a 1×1 map passes through unchanged.
    MaxPool,
    Residual {
        main: Vec<Layer>,
        shortcut: Vec<Layer>,
    },
    Flatten,
    Linear {
        weight: usize,
        bias: usize,
        fan_in: usize,
        fan_out: usize,
    },
    L2Normalize,
}

#[derive(Clone, Debug)]
pub enum Cache {
    Conv { input: Tensor4 },
    BatchNorm {
        xhat: Tensor4,
        inv_std: Vec<f64>,
        /// Batch mean and unbiased variance, present in train mode.
        stats: Option<(Vec<f64>, Vec<f64>)>,
    },
    Relu { output: Tensor4 },
    MaxPool { argmax: Vec<usize>, input_shape: [usize; 4] },
    Residual { main: Vec<Cache>, shortcut: Vec<Cache> },
    Flatten { input_shape: [usize; 4] },
    Linear { input: Tensor4 },
    L2Normalize { output: Tensor4, norms: Vec<f64> },
}

#[cfg(feature = "parallel")]
fn map_samples<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_samples<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

fn im2col(x: &[f64], cin: usize, h: usize, w: usize, k: usize, col: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    for xo in 0..w {
                        let sx = xo as isize + kx as isize - pad;
                        dst[y * w + xo] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            x[(c * h + sy as usize) * w + sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], cin: usize, h: usize, w: usize, k: usize, dx: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xo in 0..w {
                        let sx = xo as isize + kx as isize - pad;
                        if sx >= 0 && sx < w as isize {
                            dx[(c * h + sy as usize) * w + sx as usize] += src[y * w + xo];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &Tensor4, weight: &[f64], cin: usize, cout: usize, k: usize) -> Tensor4 {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let ckk = cin * k * k;
    let per = map_samples(x.n, |i| {
        let xi = &x.data[i * cin * hw..(i + 1) * cin * hw];
        let mut out = vec![0.0; cout * hw];
        if k == 1 {
            gemm(cout, ckk, hw, weight, false, xi, false, 0.0, &mut out);
        } else {
            let mut col = vec![0.0; ckk * hw];
            im2col(xi, cin, h, w, k, &mut col);
            gemm(cout, ckk, hw, weight, false, &col, false, 0.0, &mut out);
        }
        out
    });
    Tensor4::from_vec(x.n, cout, h, w, per.concat())
}

/// Returns `(grad_input, grad_weight)`.
fn conv_backward(
    x: &Tensor4,
    weight: &[f64],
    dy: &Tensor4,
    cin: usize,
    cout: usize,
    k: usize,
    need_input_grad: bool,
) -> (Option<Tensor4>, Vec<f64>) {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let ckk = cin * k * k;
    let per = map_samples(x.n, |i| {
        let xi = &x.data[i * cin * hw..(i + 1) * cin * hw];
        let dyi = &dy.data[i * cout * hw..(i + 1) * cout * hw];
        let mut dw = vec![0.0; cout * ckk];
        let col_owned;
        let col: &[f64] = if k == 1 {
            xi
        } else {
            let mut c = vec![0.0; ckk * hw];
            im2col(xi, cin, h, w, k, &mut c);
            col_owned = c;
            &col_owned
        };
        // dW = dY · colᵀ
        gemm(cout, hw, ckk, dyi, false, col, true, 0.0, &mut dw);
        let dx = need_input_grad.then(|| {
            let mut dcol = vec![0.0; ckk * hw];
            // dcol = Wᵀ · dY
            gemm(ckk, cout, hw, weight, true, dyi, false, 0.0, &mut dcol);
            if k == 1 {
                dcol
            } else {
                let mut dx = vec![0.0; cin * hw];
                col2im(&dcol, cin, h, w, k, &mut dx);
                dx
            }
        });
        (dw, dx)
    });
    let mut grad_w = vec![0.0; cout * ckk];
    let mut dx_all = need_input_grad.then(|| Vec::with_capacity(x.data.len()));
    for (dw, dx) in per {
        for (g, d) in grad_w.iter_mut().zip(&dw) {
            *g += d;
        }
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
    }
    (
        dx_all.map(|d| Tensor4::from_vec(x.n, cin, h, w, d)),
        grad_w,
    )
}

fn bn_forward(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    mode: Mode,
) -> (Tensor4, Cache) {
    let (n, c, hw) = (x.n, x.c, x.h * x.w);
    let m = (n * hw) as f64;
    let mut xhat = Tensor4::zeros(n, c, x.h, x.w);
    let mut out = Tensor4::zeros(n, c, x.h, x.w);
    let mut inv_std = vec![0.0; c];
    let mut stats = None;
    let (means, vars): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            let mut means = vec![0.0; c];
            let mut vars = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for i in 0..n {
                    s += x.data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().sum::<f64>();
                }
                let mean = s / m;
                let mut v = 0.0;
                for i in 0..n {
                    v += x.data[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                        .iter()
                        .map(|&z| (z - mean) * (z - mean))
                        .sum::<f64>();
                }
                means[ch] = mean;
                vars[ch] = v / m;
            }
            let unbiased = vars
                .iter()
                .map(|&v| if m > 1.0 { v * m / (m - 1.0) } else { v })
                .collect();
            stats = Some((means.clone(), unbiased));
            (means, vars)
        }
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };
    for ch in 0..c {
        let is = 1.0 / (vars[ch] + BN_EPS).sqrt();
        inv_std[ch] = is;
        for i in 0..n {
            let base = (i * c + ch) * hw;
            for p in 0..hw {
                let xh = (x.data[base + p] - means[ch]) * is;
                xhat.data[base + p] = xh;
                out.data[base + p] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (out, Cache::BatchNorm { xhat, inv_std, stats })
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
fn bn_backward(
    dy: &Tensor4,
    gamma: &[f64],
    xhat: &Tensor4,
    inv_std: &[f64],
    train: bool,
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let (n, c, hw) = (dy.n, dy.c, dy.h * dy.w);
    let m = (n * hw) as f64;
    let mut dx = Tensor4::zeros(n, c, dy.h, dy.w);
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for i in 0..n {
            let base = (i * c + ch) * hw;
            for p in 0..hw {
                sum_dy += dy.data[base + p];
                sum_dy_xhat += dy.data[base + p] * xhat.data[base + p];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let k = gamma[ch] * inv_std[ch];
        for i in 0..n {
            let base = (i * c + ch) * hw;
            for p in 0..hw {
                dx.data[base + p] = if train {
                    k * (dy.data[base + p] - sum_dy / m - xhat.data[base + p] * sum_dy_xhat / m)
                } else {
                    k * dy.data[base + p]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

fn pool_forward(x: &Tensor4) -> (Tensor4, Vec<usize>) {
    let (oh, ow) = (x.h.div_ceil(2), x.w.div_ceil(2));
    let mut out = Tensor4::zeros(x.n, x.c, oh, ow);
    let mut argmax = vec![0; out.data.len()];
    for nc in 0..x.n * x.c {
        let src = nc * x.h * x.w;
        let dst = nc * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = src + 2 * oy * x.w + 2 * ox;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (y, xx) = (2 * oy + dy, 2 * ox + dx);
                        if y < x.h && xx < x.w {
                            let idx = src + y * x.w + xx;
                            if x.data[idx] > x.data[best] {
                                best = idx;
                            }
                        }
                    }
                }
                out.data[dst + oy * ow + ox] = x.data[best];
                argmax[dst + oy * ow + ox] = best;
            }
        }
    }
    (out, argmax)
}

pub(crate) fn forward(
    layers: &[Layer],
    params: &[&[f64]],
    mut x: Tensor4,
    mode: Mode,
    caches: &mut Vec<Cache>,
) -> Tensor4 {
    for layer in layers {
        x = match layer {
            Layer::Conv { weight, cin, cout, k } => {
                let y = conv_forward(&x, params[*weight], *cin, *cout, *k);
                caches.push(Cache::Conv { input: x });
                y
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } => {
                let (y, cache) = bn_forward(
                    &x,
                    params[*gamma],
                    params[*beta],
                    params[*running_mean],
                    params[*running_var],
                    mode,
                );
                caches.push(cache);
                y
            }
            Layer::Relu => {
                let mut y = x;
                for v in &mut y.data {
                    *v = v.max(0.0);
                }
                caches.push(Cache::Relu { output: y.clone() });
                y
            }
            Layer::MaxPool => {
                let (y, argmax) = pool_forward(&x);
                caches.push(Cache::MaxPool {
                    argmax,
                    input_shape: x.shape(),
                });
                y
            }
            Layer::Residual { main, shortcut } => {
                let mut main_caches = Vec::new();
                let mut short_caches = Vec::new();
                let a = forward(main, params, x.clone(), mode, &mut main_caches);
                let b = forward(shortcut, params, x, mode, &mut short_caches);
                caches.push(Cache::Residual {
                    main: main_caches,
                    shortcut: short_caches,
                });
                let mut y = a;
                for (u, v) in y.data.iter_mut().zip(&b.data) {
                    *u += v;
                }
                y
            }
            Layer::Flatten => {
                let shape = x.shape();
                caches.push(Cache::Flatten { input_shape: shape });
                let f = x.sample_len();
                Tensor4::from_vec(x.n, f, 1, 1, x.data)
            }
            Layer::Linear {
                weight,
                bias,
                fan_in,
                fan_out,
            } => {
                let mut y = Tensor4::zeros(x.n, *fan_out, 1, 1);
                for i in 0..x.n {
                    y.data[i * fan_out..(i + 1) * fan_out].copy_from_slice(params[*bias]);
                }
                gemm(x.n, *fan_in, *fan_out, &x.data, false, params[*weight], true, 1.0, &mut y.data);
                caches.push(Cache::Linear { input: x });
                y
            }
            Layer::L2Normalize => {
                let f = x.sample_len();
                let mut y = x;
                let mut norms = Vec::with_capacity(y.n);
                for row in y.data.chunks_exact_mut(f) {
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    for v in row.iter_mut() {
                        *v /= norm;
                    }
                    norms.push(norm);
                }
                caches.push(Cache::L2Normalize {
                    output: y.clone(),
                    norms,
                });
                y
            }
        };
    }
    x
}

/// Back-propagates `grad` through `layers`, accumulating parameter
/// gradients into `grads`. Returns the input gradient when requested.
pub(crate) fn backward(
    layers: &[Layer],
    params: &[&[f64]],
    caches: &[Cache],
    mut grad: Tensor4,
    grads: &mut [Vec<f64>],
    need_input_grad: bool,
) -> Option<Tensor4> {
    assert_eq!(layers.len(), caches.len(), "cache does not match layer list");
    for (pos, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let needs = need_input_grad || pos > 0;
        grad = match (layer, cache) {
            (Layer::Conv { weight, cin, cout, k }, Cache::Conv { input }) => {
                let (dx, dw) = conv_backward(input, params[*weight], &grad, *cin, *cout, *k, needs);
                for (g, d) in grads[*weight].iter_mut().zip(&dw) {
                    *g += d;
                }
                dx?
            }
            (Layer::BatchNorm { gamma, beta, .. }, Cache::BatchNorm { xhat, inv_std, stats }) => {
                let (dx, dg, db) = bn_backward(&grad, params[*gamma], xhat, inv_std, stats.is_some());
                for (g, d) in grads[*gamma].iter_mut().zip(&dg) {
                    *g += d;
                }
                for (g, d) in grads[*beta].iter_mut().zip(&db) {
                    *g += d;
                }
                dx
            }
            (Layer::Relu, Cache::Relu { output }) => {
                for (g, &o) in grad.data.iter_mut().zip(&output.data) {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                }
                grad
            }
            (Layer::MaxPool, Cache::MaxPool { argmax, input_shape }) => {
                let [n, c, h, w] = *input_shape;
                let mut dx = Tensor4::zeros(n, c, h, w);
                for (g, &src) in grad.data.iter().zip(argmax) {
                    dx.data[src] += g;
                }
                dx
            }
            (Layer::Residual { main, shortcut }, Cache::Residual { main: mc, shortcut: sc }) => {
                let a = backward(main, params, mc, grad.clone(), grads, needs);
                let b = backward(shortcut, params, sc, grad, grads, needs);
                match (a, b) {
                    (Some(mut a), Some(b)) => {
                        for (u, v) in a.data.iter_mut().zip(&b.data) {
                            *u += v;
                        }
                        a
                    }
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => return None,
                }
            }
            (Layer::Flatten, Cache::Flatten { input_shape }) => {
                let [n, c, h, w] = *input_shape;
                Tensor4::from_vec(n, c, h, w, grad.data)
            }
            (
                Layer::Linear {
                    weight,
                    bias,
                    fan_in,
                    fan_out,
                },
                Cache::Linear { input },
            ) => {
                let n = input.n;
                // dW += dYᵀ · X
                gemm(*fan_out, n, *fan_in, &grad.data, true, &input.data, false, 1.0, &mut grads[*weight]);
                for row in grad.data.chunks_exact(*fan_out) {
                    for (g, d) in grads[*bias].iter_mut().zip(row) {
                        *g += d;
                    }
                }
                if !needs {
                    return None;
                }
                let mut dx = Tensor4::zeros(n, *fan_in, 1, 1);
                gemm(n, *fan_out, *fan_in, &grad.data, false, params[*weight], false, 0.0, &mut dx.data);
                dx
            }
            (Layer::L2Normalize, Cache::L2Normalize { output, norms }) => {
                let f = output.sample_len();
                let mut dx = grad;
                for ((g, y), &norm) in dx
                    .data
                    .chunks_exact_mut(f)
                    .zip(output.data.chunks_exact(f))
                    .zip(norms)
                {
                    let proj: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    for (gi, yi) in g.iter_mut().zip(y) {
                        *gi = (*gi - yi * proj) / norm;
                    }
                }
                dx
            }
            _ => unreachable!("layer/cache kind mismatch"),
        };
    }
    Some(grad)
}

/// Collects `(running_mean, running_var, batch_mean, batch_var)` for every
/// normalization layer run in train mode.
pub(crate) fn batch_stats<'a>(
    layers: &[Layer],
    caches: &'a [Cache],
    out: &mut Vec<(usize, usize, &'a [f64], &'a [f64])>,
) {
    for (layer, cache) in layers.iter().zip(caches) {
        match (layer, cache) {
            (
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                },
                Cache::BatchNorm {
                    stats: Some((mean, var)),
                    ..
                },
            ) => out.push((*running_mean, *running_var, mean, var)),
            (Layer::Residual { main, shortcut }, Cache::Residual { main: mc, shortcut: sc }) => {
                batch_stats(main, mc, out);
                batch_stats(shortcut, sc, out);
            }
            _ => {}
        }
    }
}
