//! Per-layer forward and backward kernels on NCHW batches.

use super::real::{gemm, Real};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Unrolls one `c x h x w` image into `(c * k * k) x (h * w)` columns with
/// zero same-padding.
pub fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xo, d) in dst.iter_mut().enumerate() {
                        let sx = xo as isize + dx;
                        *d = if sx < 0 || sx >= w as isize { T::zero() } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the image.
pub fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xo, &v) in row[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = xo as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub out: usize,
    pub k: usize,
}

impl ConvDims {
    fn col_len(&self) -> usize {
        self.c * self.k * self.k * self.h * self.w
    }
}

pub fn conv_forward<T: Real>(d: ConvDims, x: &[T], weight: &[T], bias: &[T], y: &mut [T]) {
    let hw = d.h * d.w;
    let ck = d.c * d.k * d.k;
    let mut col = vec![T::zero(); d.col_len()];
    for s in 0..d.n {
        im2col(&x[s * d.c * hw..(s + 1) * d.c * hw], d.c, d.h, d.w, d.k, &mut col);
        let ys = &mut y[s * d.out * hw..(s + 1) * d.out * hw];
        for (o, row) in ys.chunks_exact_mut(hw).enumerate() {
            row.fill(bias[o]);
        }
        gemm(false, false, d.out, hw, ck, T::one(), weight, &col, T::one(), ys);
    }
}

/// Accumulates weight and bias gradients; writes the input gradient when
/// `dx` is given.
pub fn conv_backward<T: Real>(
    d: ConvDims,
    x: &[T],
    weight: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let hw = d.h * d.w;
    let ck = d.c * d.k * d.k;
    let mut col = vec![T::zero(); d.col_len()];
    let mut dcol = vec![T::zero(); if dx.is_some() { d.col_len() } else { 0 }];
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(T::zero());
    }
    for s in 0..d.n {
        let dys = &dy[s * d.out * hw..(s + 1) * d.out * hw];
        im2col(&x[s * d.c * hw..(s + 1) * d.c * hw], d.c, d.h, d.w, d.k, &mut col);
        gemm(false, true, d.out, ck, hw, T::one(), dys, &col, T::one(), dw);
        for (o, row) in dys.chunks_exact(hw).enumerate() {
            db[o] += row.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(true, false, ck, hw, d.out, T::one(), weight, dys, T::zero(), &mut dcol);
            col2im(&dcol, d.c, d.h, d.w, d.k, &mut dx[s * d.c * hw..(s + 1) * d.c * hw]);
        }
    }
}

/// 2x2 max-pool; `arg` receives the input index of each maximum.
pub fn pool_forward<T: Real>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    y: &mut [T],
    arg: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = p * oh * ow + i * ow + j;
                y[o] = x[best];
                arg[o] = best as u32;
            }
        }
    }
}

pub fn pool_backward<T: Real>(dy: &[T], arg: &[u32], dx: &mut [T]) {
    dx.fill(T::zero());
    for (&g, &a) in dy.iter().zip(arg) {
        dx[a as usize] += g;
    }
}

/// Batch statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Train-mode batch normalisation over batch and spatial positions.
pub fn bn_forward_train<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[T],
    beta: &[T],
    y: &mut [T],
) -> BnCache<T> {
    let m = T::of((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let v = &x[(s * c + ch) * hw..][..hw];
            mean[ch] += v.iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for s in 0..n {
        for ch in 0..c {
            let mu = mean[ch];
            let v = &x[(s * c + ch) * hw..][..hw];
            var[ch] += v.iter().map(|&a| (a - mu) * (a - mu)).sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(BN_EPS)).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * hw;
            for k in off..off + hw {
                let xh = (x[k] - mean[ch]) * inv_std[ch];
                xhat[k] = xh;
                y[k] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    BnCache { xhat, inv_std, mean, var }
}

#[allow(clippy::too_many_arguments)]
pub fn bn_forward_infer<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    y: &mut [T],
) {
    for ch in 0..c {
        let scale = gamma[ch] / (running_var[ch] + T::of(BN_EPS)).sqrt();
        let shift = beta[ch] - running_mean[ch] * scale;
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for k in off..off + hw {
                y[k] = x[k] * scale + shift;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn bn_backward<T: Real>(
    cache: &BnCache<T>,
    dy: &[T],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    dx: &mut [T],
) {
    let m = T::of((n * hw) as f64);
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for k in off..off + hw {
                sum_dy += dy[k];
                sum_dy_xhat += dy[k] * cache.xhat[k];
            }
        }
        dgamma[ch] += sum_dy_xhat;
        dbeta[ch] += sum_dy;
        let scale = gamma[ch] * cache.inv_std[ch] / m;
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for k in off..off + hw {
                dx[k] = scale * (m * dy[k] - sum_dy - cache.xhat[k] * sum_dy_xhat);
            }
        }
    }
}

/// `y (n x out) = x (n x inp) * W^T + b` with `W` stored `out x inp`.
pub fn dense_forward<T: Real>(
    x: &[T],
    n: usize,
    inp: usize,
    out: usize,
    weight: &[T],
    bias: &[T],
    y: &mut [T],
) {
    for row in y.chunks_exact_mut(out) {
        row.copy_from_slice(bias);
    }
    gemm(false, true, n, out, inp, T::one(), x, weight, T::one(), y);
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    x: &[T],
    dy: &[T],
    n: usize,
    inp: usize,
    out: usize,
    weight: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    gemm(true, false, out, inp, n, T::one(), dy, x, T::one(), dw);
    for row in dy.chunks_exact(out) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    if let Some(dx) = dx {
        gemm(false, false, n, inp, out, T::one(), dy, weight, T::zero(), dx);
    }
}

/// Row-wise softmax.
pub fn softmax<T: Real>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|&z| (z - m).exp()).collect();
        let s: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    out
}

/// `-ln softmax(z)[t]`, computed without forming the probabilities.
pub fn cross_entropy<T: Real>(row: &[T], target: usize) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    lse - row[target]
}
