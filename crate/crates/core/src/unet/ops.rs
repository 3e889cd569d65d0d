//! Forward and backward kernels for the network's building blocks.

use super::scalar::Scalar;
use super::tensor::Tensor;

const LANES: usize = 16;

/// Dot product with a fixed sixteen-lane reduction order.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Sum with the same lane layout as [`dot`].
pub fn lane_sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = a.chunks_exact(LANES);
    let tail: T = chunks.remainder().iter().copied().sum();
    for x in chunks {
        for l in 0..LANES {
            acc[l] += x[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

fn centered_sq_sum<T: Scalar>(a: &[T], mu: T) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = a.chunks_exact(LANES);
    let tail: T = chunks.remainder().iter().map(|&t| (t - mu) * (t - mu)).sum();
    for x in chunks {
        for l in 0..LANES {
            let d = x[l] - mu;
            acc[l] += d * d;
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// `o[x] += k0 r[x-1] + k1 r[x] + k2 r[x+1]` with zeros outside the row.
fn row_taps<T: Scalar>(o: &mut [T], r: &[T], k: &[T]) {
    let w = o.len();
    let (k0, k1, k2) = (k[0], k[1], k[2]);
    if w == 1 {
        o[0] += k1 * r[0];
        return;
    }
    o[0] += k1 * r[0] + k2 * r[1];
    o[w - 1] += k0 * r[w - 2] + k1 * r[w - 1];
    for (((ov, &a), &b), &c) in o[1..w - 1].iter_mut().zip(&r[..w - 2]).zip(&r[1..w - 1]).zip(&r[2..]) {
        *ov += k0 * a + k1 * b + k2 * c;
    }
}

/// 3×3 depthwise convolution with zero padding 1; `kernels` holds 9 taps per channel.
pub fn depthwise_forward<T: Scalar>(x: &Tensor<T>, kernels: &[T]) -> Tensor<T> {
    let (n, c, h, w) = x.shape();
    let mut out = Tensor::zeros(n, c, h, w);
    for s in 0..n {
        for ch in 0..c {
            let k = &kernels[ch * 9..ch * 9 + 9];
            let inp = x.plane(s, ch);
            let o = out.plane_mut(s, ch);
            for y in 0..h {
                let orow = &mut o[y * w..(y + 1) * w];
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    row_taps(orow, &inp[sy * w..(sy + 1) * w], &k[ky * 3..ky * 3 + 3]);
                }
            }
        }
    }
    out
}

/// Gradients of [`depthwise_forward`]: returns `(d_input, d_kernels)`.
pub fn depthwise_backward<T: Scalar>(x: &Tensor<T>, kernels: &[T], grad: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let (n, c, h, w) = x.shape();
    let mut dx_t = Tensor::zeros(n, c, h, w);
    let mut dk = vec![T::zero(); c * 9];
    for s in 0..n {
        for ch in 0..c {
            let k = &kernels[ch * 9..ch * 9 + 9];
            let inp = x.plane(s, ch);
            let g = grad.plane(s, ch);
            let di = dx_t.plane_mut(s, ch);
            let dkc = &mut dk[ch * 9..ch * 9 + 9];
            for y in 0..h {
                let grow = &g[y * w..(y + 1) * w];
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let irow = &inp[sy * w..(sy + 1) * w];
                    // Output x reads input x + kx - 1.
                    if w > 1 {
                        dkc[ky * 3] += dot(&grow[1..], &irow[..w - 1]);
                        dkc[ky * 3 + 2] += dot(&grow[..w - 1], &irow[1..]);
                    }
                    dkc[ky * 3 + 1] += dot(grow, irow);
                    // Transposed taps: input x' collects output x' - kx + 1.
                    let kt = [k[ky * 3 + 2], k[ky * 3 + 1], k[ky * 3]];
                    row_taps(&mut di[sy * w..(sy + 1) * w], grow, &kt);
                }
            }
        }
    }
    (dx_t, dk)
}

/// `C = beta C + A B` for row-major `B` (k × n) and `C` (m × n) with a short
/// inner dimension, where row-by-row axpy beats a packed gemm.
fn rows_gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], a_rs: usize, a_cs: usize, b: &[T], beta: T, c: &mut [T]) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        if beta == T::zero() {
            row.iter_mut().for_each(|v| *v = T::zero());
        } else if beta != T::one() {
            row.iter_mut().for_each(|v| *v *= beta);
        }
        for j in 0..k {
            let av = a[i * a_rs + j * a_cs];
            for (cv, &bv) in row.iter_mut().zip(&b[j * n..(j + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
}

const SHORT_INNER: usize = 16;

/// 1×1 convolution: `out[co] = sum_ci W[co, ci] * x[ci] + bias[co]`.
pub fn pointwise_forward<T: Scalar>(x: &Tensor<T>, weight: &[T], bias: &[T], c_out: usize) -> Tensor<T> {
    let (n, c_in, h, w) = x.shape();
    let p = h * w;
    let mut out = Tensor::zeros(n, c_out, h, w);
    for s in 0..n {
        let o = out.sample_mut(s);
        for (co, &b) in bias.iter().enumerate() {
            o[co * p..(co + 1) * p].iter_mut().for_each(|v| *v = b);
        }
        if c_in <= SHORT_INNER {
            rows_gemm(c_out, c_in, p, weight, c_in, 1, x.sample(s), T::one(), o);
            continue;
        }
        T::gemm(
            c_out,
            c_in,
            p,
            T::one(),
            (weight, c_in as isize, 1),
            (x.sample(s), p as isize, 1),
            T::one(),
            (o, p as isize, 1),
        );
    }
    out
}

/// Gradients of [`pointwise_forward`]: `(d_input, d_weight, d_bias)`.
pub fn pointwise_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    grad: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let (n, c_in, h, w) = x.shape();
    let c_out = grad.c;
    let p = h * w;
    let mut dx = Tensor::zeros(n, c_in, h, w);
    let mut dw = vec![T::zero(); c_out * c_in];
    let mut db = vec![T::zero(); c_out];
    for s in 0..n {
        let g = grad.sample(s);
        for (co, b) in db.iter_mut().enumerate() {
            *b += lane_sum(&g[co * p..(co + 1) * p]);
        }
        // dW += G (c_out × P) · Xᵀ (P × c_in)
        if p >= 256 {
            let xs = x.sample(s);
            for co in 0..c_out {
                let grow = &g[co * p..(co + 1) * p];
                for ci in 0..c_in {
                    dw[co * c_in + ci] += dot(grow, &xs[ci * p..(ci + 1) * p]);
                }
            }
        } else {
        T::gemm(
            c_out,
            p,
            c_in,
            T::one(),
            (g, p as isize, 1),
            (x.sample(s), 1, p as isize),
            T::one(),
            (&mut dw, c_in as isize, 1),
        );
        }
        // dX = Wᵀ (c_in × c_out) · G (c_out × P)
        if c_out <= SHORT_INNER {
            rows_gemm(c_in, c_out, p, weight, 1, c_in, g, T::zero(), dx.sample_mut(s));
            continue;
        }
        T::gemm(
            c_in,
            c_out,
            p,
            T::one(),
            (weight, 1, c_in as isize),
            (g, p as isize, 1),
            T::zero(),
            (dx.sample_mut(s), p as isize, 1),
        );
    }
    (dx, dw, db)
}

/// Per-channel batch mean and biased variance over `N × H × W`.
pub fn channel_moments<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let (n, c, _, _) = x.shape();
    let count = T::from_f64((n * x.plane_len()) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += lane_sum(x.plane(b, ch));
        }
        let mu = s / count;
        let mut v = T::zero();
        for b in 0..n {
            v += centered_sq_sum(x.plane(b, ch), mu);
        }
        mean[ch] = mu;
        var[ch] = v / count;
    }
    (mean, var)
}

/// Normalizes with the given moments, then applies scale/shift and ReLU in place.
/// Returns the normalized pre-affine values and per-channel inverse std.
pub fn batchnorm_relu_forward<T: Scalar>(
    x: &mut Tensor<T>,
    mean: &[T],
    var: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Tensor<T>, Vec<T>) {
    let (n, c, _, _) = x.shape();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = x.clone();
    for b in 0..n {
        for ch in 0..c {
            let (mu, is, g, be) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            let xh = xhat.plane_mut(b, ch);
            let out = x.plane_mut(b, ch);
            for (o, h) in out.iter_mut().zip(xh.iter_mut()) {
                *h = (*o - mu) * is;
                let y = g * *h + be;
                *o = if y > T::zero() { y } else { T::zero() };
            }
        }
    }
    (xhat, inv_std)
}

/// Backward through ReLU, affine and normalization.
///
/// `train` selects batch-statistics normalization (gradient flows through the
/// moments); otherwise the moments are constants. Returns
/// `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_relu_backward<T: Scalar>(
    out: &Tensor<T>,
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &[T],
    grad: &Tensor<T>,
    train: bool,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let (n, c, h, w) = out.shape();
    let m = T::from_f64((n * h * w) as f64);
    let mut dx = Tensor::zeros(n, c, h, w);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        // Masked upstream gradient first, then the batch-coupling correction.
        let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
        for b in 0..n {
            let d = dx.plane_mut(b, ch);
            for ((dv, &o), &g) in d.iter_mut().zip(out.plane(b, ch)).zip(grad.plane(b, ch)) {
                *dv = if o > T::zero() { g } else { T::zero() };
            }
            sum_d += lane_sum(d);
            sum_dx += dot(d, xhat.plane(b, ch));
        }
        dgamma[ch] = sum_dx;
        dbeta[ch] = sum_d;
        let scale = gamma[ch] * inv_std[ch];
        let (mean_d, mean_dx) = (sum_d / m, sum_dx / m);
        for b in 0..n {
            let xh = xhat.plane(b, ch);
            let d = dx.plane_mut(b, ch);
            if train {
                for (dv, &x) in d.iter_mut().zip(xh) {
                    *dv = scale * (*dv - mean_d - x * mean_dx);
                }
            } else {
                d.iter_mut().for_each(|dv| *dv = scale * *dv);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// 2×2 max pooling with stride 2. Also returns the winning position (0..4) of
/// each output, first maximum on ties.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u8>) {
    let (n, c, h, w) = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(n, c, oh, ow);
    let mut arg = vec![0u8; n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            let inp = x.plane(b, ch);
            let base = (b * c + ch) * oh * ow;
            let o = out.plane_mut(b, ch);
            for y in 0..oh {
                for xx in 0..ow {
                    let cand = [
                        inp[2 * y * w + 2 * xx],
                        inp[2 * y * w + 2 * xx + 1],
                        inp[(2 * y + 1) * w + 2 * xx],
                        inp[(2 * y + 1) * w + 2 * xx + 1],
                    ];
                    let mut best = 0;
                    for k in 1..4 {
                        if cand[k] > cand[best] {
                            best = k;
                        }
                    }
                    o[y * ow + xx] = cand[best];
                    arg[base + y * ow + xx] = best as u8;
                }
            }
        }
    }
    (out, arg)
}

/// 2x2 pooling that picks the entries named by `arg` instead of the maxima.
pub fn maxpool_with<T: Scalar>(x: &Tensor<T>, arg: &[u8]) -> Tensor<T> {
    let (n, c, h, w) = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(n, c, oh, ow);
    for b in 0..n {
        for ch in 0..c {
            let inp = x.plane(b, ch);
            let base = (b * c + ch) * oh * ow;
            let o = out.plane_mut(b, ch);
            for y in 0..oh {
                for xx in 0..ow {
                    let k = arg[base + y * ow + xx] as usize;
                    o[y * ow + xx] = inp[(2 * y + k / 2) * w + 2 * xx + k % 2];
                }
            }
        }
    }
    out
}

pub fn maxpool_backward<T: Scalar>(grad: &Tensor<T>, arg: &[u8], h: usize, w: usize) -> Tensor<T> {
    let (n, c, oh, ow) = grad.shape();
    let mut dx = Tensor::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            let g = grad.plane(b, ch);
            let base = (b * c + ch) * oh * ow;
            let d = dx.plane_mut(b, ch);
            for y in 0..oh {
                for xx in 0..ow {
                    let k = arg[base + y * ow + xx] as usize;
                    d[(2 * y + k / 2) * w + 2 * xx + k % 2] = g[y * ow + xx];
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.shape();
    let ow = 2 * w;
    let mut out = Tensor::zeros(n, c, 2 * h, ow);
    for b in 0..n {
        for ch in 0..c {
            let inp = x.plane(b, ch);
            let o = out.plane_mut(b, ch);
            for y in 0..2 * h {
                let row = &inp[(y / 2) * w..(y / 2 + 1) * w];
                for (xx, v) in o[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                    *v = row[xx / 2];
                }
            }
        }
    }
    out
}

pub fn upsample_backward<T: Scalar>(grad: &Tensor<T>) -> Tensor<T> {
    let (n, c, h2, w2) = grad.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            let g = grad.plane(b, ch);
            let d = dx.plane_mut(b, ch);
            for y in 0..h2 {
                for xx in 0..w2 {
                    d[(y / 2) * w + xx / 2] += g[y * w2 + xx];
                }
            }
        }
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat spatial mismatch");
    let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    for s in 0..a.n {
        let (sa, sb) = (a.sample(s), b.sample(s));
        let o = out.sample_mut(s);
        o[..sa.len()].copy_from_slice(sa);
        o[sa.len()..].copy_from_slice(sb);
    }
    out
}

/// Splits a concatenated gradient back into its `c_first` and remaining channels.
pub fn split<T: Scalar>(g: &Tensor<T>, c_first: usize) -> (Tensor<T>, Tensor<T>) {
    let p = g.plane_len();
    let mut a = Tensor::zeros(g.n, c_first, g.h, g.w);
    let mut b = Tensor::zeros(g.n, g.c - c_first, g.h, g.w);
    for s in 0..g.n {
        let gs = g.sample(s);
        a.sample_mut(s).copy_from_slice(&gs[..c_first * p]);
        b.sample_mut(s).copy_from_slice(&gs[c_first * p..]);
    }
    (a, b)
}
