//! Direct-convolution reference for the UNet forward pass in eval mode.
//!
//! Each separable layer is expanded into the equivalent full 3×3 kernel
//! `K[co][ci][ky][kx] = pointwise[co][ci] * depthwise[ci][ky][kx]` and applied
//! with a plain six-deep loop. Shares no code with the library's kernels.

use res_core::unet::{UNetConfig, UNetWeights};

/// `[channel][row][col]` activation of one sample.
pub type Planes = Vec<Vec<Vec<f64>>>;

fn full_conv_bn_relu(x: &Planes, w: &UNetWeights<f64>, layer: usize, eps: f64) -> Planes {
    let v = w.layer(layer);
    let (c_in, c_out) = (v.shape.c_in, v.shape.c_out);
    let (h, wd) = (x[0].len(), x[0][0].len());
    let mut out = vec![vec![vec![0.0; wd]; h]; c_out];
    for co in 0..c_out {
        for ci in 0..c_in {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            let k = v.pointwise[co * c_in + ci] * v.depthwise[ci * 9 + ky * 3 + kx];
                            acc += k * x[ci][sy as usize][sx as usize];
                        }
                    }
                    out[co][y][xx] += acc;
                }
            }
        }
        for row in out[co].iter_mut() {
            for val in row.iter_mut() {
                let pre = *val + v.bias[co];
                let bn = v.gamma[co] * (pre - v.running_mean[co]) / (v.running_var[co] + eps).sqrt()
                    + v.beta[co];
                *val = bn.max(0.0);
            }
        }
    }
    out
}

fn pool(x: &Planes) -> Planes {
    x.iter()
        .map(|p| {
            (0..p.len() / 2)
                .map(|y| {
                    (0..p[0].len() / 2)
                        .map(|xx| {
                            let a = [p[2 * y][2 * xx], p[2 * y][2 * xx + 1], p[2 * y + 1][2 * xx], p[2 * y + 1][2 * xx + 1]];
                            a.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn upsample(x: &Planes) -> Planes {
    x.iter()
        .map(|p| {
            (0..2 * p.len())
                .map(|y| (0..2 * p[0].len()).map(|xx| p[y / 2][xx / 2]).collect())
                .collect()
        })
        .collect()
}

/// Eval-mode forward of one `[2][frames][bins]` sample; returns `[frames][bins]`.
pub fn forward(w: &UNetWeights<f64>, input: &Planes) -> Vec<Vec<f64>> {
    let cfg: &UNetConfig = w.config();
    let eps = cfg.bn_eps;
    let mut x: Planes = vec![vec![vec![0.0; cfg.pad_bins]; cfg.pad_frames]; input.len()];
    for c in 0..input.len() {
        for y in 0..cfg.frames {
            for b in 0..cfg.bins {
                x[c][y][b] = input[c][y][b];
            }
        }
    }
    let mut skips = Vec::new();
    let mut cur = x;
    for lvl in 0..5 {
        let a = full_conv_bn_relu(&cur, w, 2 * lvl, eps);
        let b = full_conv_bn_relu(&a, w, 2 * lvl + 1, eps);
        cur = if lvl < 4 { pool(&b) } else { b.clone() };
        skips.push(b);
    }
    let mut cur = skips[4].clone();
    for lvl in (0..5).rev() {
        let i = 10 + 2 * (4 - lvl);
        let unit_in = if lvl == 4 {
            cur
        } else {
            let mut cat = skips[lvl].clone();
            cat.extend(upsample(&cur));
            cat
        };
        let a = full_conv_bn_relu(&unit_in, w, i, eps);
        cur = full_conv_bn_relu(&a, w, i + 1, eps);
    }
    let (hw, hb) = (w.head_weight(), w.head_bias());
    (0..cfg.frames)
        .map(|y| {
            (0..cfg.bins)
                .map(|b| {
                    let s: f64 = (0..cur.len()).map(|c| hw[c] * cur[c][y][b]).sum::<f64>() + hb[0];
                    s.max(0.0)
                })
                .collect()
        })
        .collect()
}
