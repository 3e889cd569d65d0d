use super::ops::*;
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::weights::UNetWeights;
use super::LEVELS;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are left for the caller to update.
    Train,
    /// Running statistics.
    Eval,
}

/// Test hook: zero the skip tensor an encoder level hands to the decoder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    pub zero_skip: Option<usize>,
}

struct LayerCache<T> {
    input: Tensor<T>,
    dw_out: Tensor<T>,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    out: Tensor<T>,
    mean: Vec<T>,
    var: Vec<T>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<T> {
    mode: Mode,
    ablation: Ablation,
    layers: Vec<LayerCache<T>>,
    pool_args: Vec<Vec<u8>>,
    head_out: Tensor<T>,
    skip_channels: [usize; LEVELS],
}

impl<T: Scalar> ForwardCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch mean and variance of layer `i` (running values in eval mode).
    pub fn layer_moments(&self, i: usize) -> (&[T], &[T]) {
        (&self.layers[i].mean, &self.layers[i].var)
    }

    /// Output of layer `i` after ReLU.
    pub fn layer_output(&self, i: usize) -> &Tensor<T> {
        &self.layers[i].out
    }
}

pub struct Gradients<T> {
    /// Same layout as [`UNetWeights::params`].
    pub params: Vec<T>,
    /// Gradient with respect to the unpadded input block.
    pub input: Tensor<T>,
}

fn layer_forward<T: Scalar>(
    w: &UNetWeights<T>,
    i: usize,
    x: Tensor<T>,
    mode: Mode,
    frozen: Option<&ForwardCache<T>>,
) -> Result<LayerCache<T>> {
    let v = w.layer(i);
    let dw_out = depthwise_forward(&x, v.depthwise);
    let mut y = pointwise_forward(&dw_out, v.pointwise, v.bias, v.shape.c_out);
    let (mean, var) = match mode {
        Mode::Train => channel_moments(&y),
        Mode::Eval => (v.running_mean.to_vec(), v.running_var.to_vec()),
    };
    let eps = T::from_f64(w.config().bn_eps);
    let pre = frozen.map(|_| y.clone());
    let (xhat, inv_std) = batchnorm_relu_forward(&mut y, &mean, &var, v.gamma, v.beta, eps);
    if let (Some(f), Some(pre)) = (frozen, pre) {
        // Reapply the reference ReLU mask to the affine output.
        let mask = &f.layers[i].out;
        let plane = y.plane_len();
        let c = y.c;
        let planes = y.data.chunks_mut(plane).zip(pre.data.chunks(plane)).zip(mask.data.chunks(plane));
        for (k, ((o, p), r)) in planes.enumerate() {
            let ch = k % c;
            let (g, mu, is, be) = (v.gamma[ch], mean[ch], inv_std[ch], v.beta[ch]);
            for ((o, &p), &r) in o.iter_mut().zip(p).zip(r) {
                *o = if r > T::zero() { g * (p - mu) * is + be } else { T::zero() };
            }
        }
    }
    if !y.all_finite() {
        return Err(Error::NonFinite(format!("activation of layer {}", v.shape.name)));
    }
    Ok(LayerCache { input: x, dw_out, xhat, inv_std, out: y, mean, var })
}

fn layer_backward<T: Scalar>(
    w: &UNetWeights<T>,
    i: usize,
    c: &LayerCache<T>,
    g: &Tensor<T>,
    mode: Mode,
    grads: &mut [T],
) -> Tensor<T> {
    let v = w.layer(i);
    let (g_pre, dgamma, dbeta) =
        batchnorm_relu_backward(&c.out, &c.xhat, &c.inv_std, v.gamma, g, mode == Mode::Train);
    let (g_dw, dpw, dpb) = pointwise_backward(&c.dw_out, v.pointwise, &g_pre);
    let (g_in, ddw) = depthwise_backward(&c.input, v.depthwise, &g_dw);
    let r = w.layer_ranges(i);
    for (range, src) in r.iter().zip([&ddw, &dpw, &dpb, &dgamma, &dbeta]) {
        for (d, s) in grads[range.clone()].iter_mut().zip(src.iter()) {
            *d += *s;
        }
    }
    g_in
}

fn check_input<T: Scalar>(w: &UNetWeights<T>, input: &Tensor<T>) -> Result<()> {
    let cfg = w.config();
    let (_, c, h, wd) = input.shape();
    if c != cfg.input_channels || h != cfg.frames || wd != cfg.bins || input.n == 0 {
        return Err(Error::Shape(format!(
            "network input must be (N>0, {}, {}, {}), got {:?}",
            cfg.input_channels,
            cfg.frames,
            cfg.bins,
            input.shape()
        )));
    }
    if !input.all_finite() {
        return Err(Error::NonFinite("network input".into()));
    }
    Ok(())
}

pub fn forward<T: Scalar>(w: &UNetWeights<T>, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ForwardCache<T>)> {
    forward_with(w, input, mode, Ablation::default())
}

/// Forward pass with every ReLU mask and pooling choice taken from
/// `reference` instead of recomputed. Within that linear region this is the
/// same smooth function whose derivative [`backward`] returns, which makes it
/// usable for finite-difference checks at coarse step sizes.
pub fn forward_frozen<T: Scalar>(
    w: &UNetWeights<T>,
    input: &Tensor<T>,
    reference: &ForwardCache<T>,
) -> Result<Tensor<T>> {
    forward_impl(w, input, reference.mode, reference.ablation, Some(reference)).map(|(y, _)| y)
}

/// Forward pass over a batch of `(N, 2, frames, bins)` blocks; returns
/// `(N, 1, frames, bins)` nonnegative predictions.
pub fn forward_with<T: Scalar>(
    w: &UNetWeights<T>,
    input: &Tensor<T>,
    mode: Mode,
    ablation: Ablation,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    forward_impl(w, input, mode, ablation, None)
}

fn forward_impl<T: Scalar>(
    w: &UNetWeights<T>,
    input: &Tensor<T>,
    mode: Mode,
    ablation: Ablation,
    frozen: Option<&ForwardCache<T>>,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    check_input(w, input)?;
    if let Some(f) = frozen {
        if f.head_out.n != input.n {
            return Err(Error::Shape("reference pattern has a different batch size".into()));
        }
    }
    let cfg = w.config();
    let n = input.n;
    let mut x = Tensor::zeros(n, cfg.input_channels, cfg.pad_frames, cfg.pad_bins);
    for b in 0..n {
        for c in 0..cfg.input_channels {
            let src = input.plane(b, c);
            let dst = x.plane_mut(b, c);
            for y in 0..cfg.frames {
                dst[y * cfg.pad_bins..y * cfg.pad_bins + cfg.bins]
                    .copy_from_slice(&src[y * cfg.bins..(y + 1) * cfg.bins]);
            }
        }
    }

    let mut layers = Vec::with_capacity(w.n_layers());
    let mut pool_args = Vec::with_capacity(LEVELS - 1);
    let mut skips = Vec::with_capacity(LEVELS);
    let mut cur = x;
    for lvl in 0..LEVELS {
        let c0 = layer_forward(w, 2 * lvl, std::mem::replace(&mut cur, Tensor::zeros(0, 0, 0, 0)), mode, frozen)?;
        let c1 = layer_forward(w, 2 * lvl + 1, c0.out.clone(), mode, frozen)?;
        let mut skip = c1.out.clone();
        if ablation.zero_skip == Some(lvl) {
            skip.data.iter_mut().for_each(|v| *v = T::zero());
        }
        if lvl + 1 < LEVELS {
            let (pooled, arg) = match frozen {
                Some(f) => (maxpool_with(&c1.out, &f.pool_args[lvl]), f.pool_args[lvl].clone()),
                None => maxpool_forward(&c1.out),
            };
            pool_args.push(arg);
            cur = pooled;
        }
        layers.push(c0);
        layers.push(c1);
        skips.push(skip);
    }
    let skip_channels = std::array::from_fn(|l| skips[l].c);

    let mut cur = skips.pop().expect("bottleneck");
    for lvl in (0..LEVELS).rev() {
        let i = 2 * LEVELS + 2 * (LEVELS - 1 - lvl);
        let unit_in = if lvl == LEVELS - 1 {
            cur
        } else {
            let skip = skips.pop().expect("skip per level");
            concat(&skip, &upsample_forward(&cur))
        };
        let c0 = layer_forward(w, i, unit_in, mode, frozen)?;
        let c1 = layer_forward(w, i + 1, c0.out.clone(), mode, frozen)?;
        cur = c1.out.clone();
        layers.push(c0);
        layers.push(c1);
    }

    let mut head_out = pointwise_forward(&cur, w.head_weight(), w.head_bias(), cfg.output_channels);
    match frozen {
        Some(f) => head_out.data.iter_mut().zip(&f.head_out.data).for_each(|(v, r)| {
            if *r <= T::zero() {
                *v = T::zero()
            }
        }),
        None => head_out.data.iter_mut().for_each(|v| {
            if *v < T::zero() {
                *v = T::zero()
            }
        }),
    }
    if !head_out.all_finite() {
        return Err(Error::NonFinite("activation of layer head".into()));
    }
    let mut out = Tensor::zeros(n, cfg.output_channels, cfg.frames, cfg.bins);
    for b in 0..n {
        for c in 0..cfg.output_channels {
            let src = head_out.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..cfg.frames {
                dst[y * cfg.bins..(y + 1) * cfg.bins]
                    .copy_from_slice(&src[y * cfg.pad_bins..y * cfg.pad_bins + cfg.bins]);
            }
        }
    }
    Ok((out, ForwardCache { mode, ablation, layers, pool_args, head_out, skip_channels }))
}

/// Exact gradients of `sum(output * upstream)` for every trainable parameter
/// and for the input block.
pub fn backward<T: Scalar>(w: &UNetWeights<T>, cache: &ForwardCache<T>, upstream: &Tensor<T>) -> Result<Gradients<T>> {
    let cfg = w.config();
    let n = cache.head_out.n;
    if upstream.shape() != (n, cfg.output_channels, cfg.frames, cfg.bins) {
        return Err(Error::Shape(format!("upstream gradient has shape {:?}", upstream.shape())));
    }
    let mode = cache.mode;
    let mut grads = vec![T::zero(); w.params.len()];

    let mut g = Tensor::zeros(n, cfg.output_channels, cfg.pad_frames, cfg.pad_bins);
    for b in 0..n {
        for c in 0..cfg.output_channels {
            let src = upstream.plane(b, c);
            let head = cache.head_out.plane(b, c);
            let dst = g.plane_mut(b, c);
            for y in 0..cfg.frames {
                for x in 0..cfg.bins {
                    let k = y * cfg.pad_bins + x;
                    if head[k] > T::zero() {
                        dst[k] = src[y * cfg.bins + x];
                    }
                }
            }
        }
    }
    let dec1_out = &cache.layers.last().expect("layers").out;
    let (mut g, dhw, dhb) = pointwise_backward(dec1_out, w.head_weight(), &g);
    let (rw, rb) = w.head_ranges();
    grads[rw].copy_from_slice(&dhw);
    grads[rb].copy_from_slice(&dhb);

    let mut skip_grads: Vec<Option<Tensor<T>>> = (0..LEVELS).map(|_| None).collect();
    for lvl in 0..LEVELS {
        let i = 2 * LEVELS + 2 * (LEVELS - 1 - lvl);
        g = layer_backward(w, i + 1, &cache.layers[i + 1], &g, mode, &mut grads);
        g = layer_backward(w, i, &cache.layers[i], &g, mode, &mut grads);
        if lvl == LEVELS - 1 {
            skip_grads[lvl] = Some(g.clone());
        } else {
            let (g_skip, g_up) = split(&g, cache.skip_channels[lvl]);
            skip_grads[lvl] = Some(g_skip);
            g = upsample_backward(&g_up);
        }
    }

    let mut from_below: Option<Tensor<T>> = None;
    for lvl in (0..LEVELS).rev() {
        let mut g_out = skip_grads[lvl].take().expect("skip gradient");
        if cache.ablation.zero_skip == Some(lvl) {
            g_out.data.iter_mut().for_each(|v| *v = T::zero());
        }
        if let Some(gp) = from_below.take() {
            let out = &cache.layers[2 * lvl + 1].out;
            let up = maxpool_backward(&gp, &cache.pool_args[lvl], out.h, out.w);
            for (a, b) in g_out.data.iter_mut().zip(&up.data) {
                *a += *b;
            }
        }
        let g1 = layer_backward(w, 2 * lvl + 1, &cache.layers[2 * lvl + 1], &g_out, mode, &mut grads);
        from_below = Some(layer_backward(w, 2 * lvl, &cache.layers[2 * lvl], &g1, mode, &mut grads));
    }

    let g_pad = from_below.expect("input gradient");
    let mut g_in = Tensor::zeros(n, cfg.input_channels, cfg.frames, cfg.bins);
    for b in 0..n {
        for c in 0..cfg.input_channels {
            let src = g_pad.plane(b, c);
            let dst = g_in.plane_mut(b, c);
            for y in 0..cfg.frames {
                dst[y * cfg.bins..(y + 1) * cfg.bins]
                    .copy_from_slice(&src[y * cfg.pad_bins..y * cfg.pad_bins + cfg.bins]);
            }
        }
    }
    Ok(Gradients { params: grads, input: g_in })
}

/// Folds a training pass's batch statistics into the running estimates.
pub fn update_running_stats<T: Scalar>(w: &mut UNetWeights<T>, cache: &ForwardCache<T>) {
    if cache.mode != Mode::Train {
        return;
    }
    let m = T::from_f64(w.config().bn_momentum);
    for (i, lc) in cache.layers.iter().enumerate() {
        let count = (lc.out.n * lc.out.plane_len()) as f64;
        let unbias = T::from_f64(if count > 1.0 { count / (count - 1.0) } else { 1.0 });
        let (rm, rv) = w.running_mut(i);
        for c in 0..rm.len() {
            rm[c] = (T::one() - m) * rm[c] + m * lc.mean[c];
            rv[c] = (T::one() - m) * rv[c] + m * lc.var[c] * unbias;
        }
    }
}
