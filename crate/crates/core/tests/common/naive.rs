//! Brute-force references for convolution, the frame metrics and the loss.

use res_core::sim::{Activity, ActivityLabels};
use res_core::training::VarianceAxis;
use res_core::unet::Tensor;

/// Direct O(N K) convolution truncated to `x.len()`.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let mut acc = 0.0;
        for k in 0..h.len().min(n + 1) {
            acc += h[k] * x[n - k];
        }
        y[n] = acc;
    }
    y
}

fn frame_sq(x: &[f64], k: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..320 {
        s += x[k * 160 + i] * x[k * 160 + i];
    }
    s
}

fn db(num: f64, den: f64) -> f64 {
    let v = 10.0 * (num.max(1e-12) / den.max(1e-12)).log10();
    v.max(-80.0).min(80.0)
}

/// Mean per-frame `10 log10 ||num||^2 / ||den||^2` over frames labelled `class`.
pub fn frame_mean(num: &[f64], den: &[f64], labels: &ActivityLabels, class: Activity) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for (k, &a) in labels.frames.iter().enumerate() {
        if a == class {
            total += db(frame_sq(num, k), frame_sq(den, k));
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(total / count as f64)
    }
}

pub fn erle(e: &[f64], p: &[f64], labels: &ActivityLabels) -> Option<f64> {
    frame_mean(e, p, labels, Activity::FarEndSingleTalk)
}

fn diff(p: &[f64], d: &[f64]) -> Vec<f64> {
    p.iter().zip(d).map(|(a, b)| a - b).collect()
}

pub fn sar(d: &[f64], p: &[f64], labels: &ActivityLabels) -> Option<f64> {
    frame_mean(d, &diff(p, d), labels, Activity::NearEndSingleTalk)
}

pub fn sdr(d: &[f64], p: &[f64], labels: &ActivityLabels) -> Option<f64> {
    frame_mean(d, &diff(p, d), labels, Activity::DoubleTalk)
}

/// Summed-energy ratio over frames within 40 dB of each stem's loudest frame.
pub fn mutual_ratio(num: &[f64], den: &[f64]) -> Option<f64> {
    let frames = if num.len() < 320 { 0 } else { (num.len() - 320) / 160 + 1 };
    let en: Vec<f64> = (0..frames).map(|k| frame_sq(num, k)).collect();
    let ed: Vec<f64> = (0..frames).map(|k| frame_sq(den, k)).collect();
    let max_n = en.iter().cloned().fold(0.0, f64::max);
    let max_d = ed.iter().cloned().fold(0.0, f64::max);
    let (mut sn, mut sd) = (0.0, 0.0);
    for k in 0..frames {
        if en[k] > 0.0 && ed[k] > 0.0 && en[k] >= max_n * 1e-4 && ed[k] >= max_d * 1e-4 {
            sn += en[k];
            sd += ed[k];
        }
    }
    if sn > 0.0 && sd > 0.0 {
        Some(10.0 * (sn / sd).log10())
    } else {
        None
    }
}

/// Scalar loops over (n, t, b) with per-term accumulators and two-pass variance.
pub fn loss(p: &Tensor<f64>, d: &Tensor<f64>, alpha: f64, axis: VarianceAxis) -> f64 {
    let (n, _, h, w) = p.shape();
    let total = (n * h * w) as f64;
    let mut err_terms = Vec::new();
    let mut pow_terms = Vec::new();
    for b in (0..w).rev() {
        for t in 0..h {
            for s in 0..n {
                let (x, y) = (p.at(s, 0, t, b), d.at(s, 0, t, b));
                err_terms.push((x - y) * (x - y));
                pow_terms.push(x * x);
            }
        }
    }
    let mean_sq = |v: &Vec<f64>| v.iter().sum::<f64>() / total;
    let mut j = mean_sq(&err_terms) + alpha * mean_sq(&pow_terms);
    if alpha > 0.0 {
        let var = match axis {
            VarianceAxis::Global => {
                let mu = p.data.iter().rev().sum::<f64>() / total;
                p.data.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / total
            }
            VarianceAxis::PerBin => {
                let mut acc = 0.0;
                for b in 0..w {
                    let vals: Vec<f64> = (0..n).flat_map(|s| (0..h).map(move |t| (s, t))).map(|(s, t)| p.at(s, 0, t, b)).collect();
                    let mu = vals.iter().sum::<f64>() / vals.len() as f64;
                    acc += vals.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / vals.len() as f64;
                }
                acc / w as f64
            }
        };
        j += 0.1 * var;
    }
    j
}
