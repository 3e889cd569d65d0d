#![allow(dead_code)]

pub mod naive;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use res_core::unet::{forward, Gradients, Mode, Tensor, UNetConfig, UNetWeights};

/// Weights with every tensor randomized, including batch-norm statistics.
pub fn random_weights(cfg: &UNetConfig, seed: u64) -> UNetWeights<f64> {
    let mut w = UNetWeights::<f64>::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let groups = w.param_groups();
    for (name, range) in groups {
        for v in &mut w.params[range] {
            if name.ends_with("bn_scale") {
                *v = rng.random_range(0.5..1.5);
            } else if name.ends_with("bn_shift") || name.ends_with("bias") {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    // Keep the head's ReLU mostly active so the output carries signal.
    w.group_mut("head.bias").unwrap()[0] = 0.5;
    // Running statistics near the true batch moments keep eval-mode units alive.
    let x = random_input(cfg, 2, seed ^ 0x5eed, 1.0);
    let (_, cache) = forward(&w, &x, Mode::Train).unwrap();
    for i in 0..w.n_layers() {
        let (bm, bv) = cache.layer_moments(i);
        let (bm, bv) = (bm.to_vec(), bv.to_vec());
        let (mean, var) = w.running_mut(i);
        for c in 0..mean.len() {
            mean[c] = bm[c] + rng.random_range(-0.1..0.1) * bv[c].sqrt();
            var[c] = bv[c] * rng.random_range(0.8..1.25);
        }
    }
    w
}

pub fn random_input(cfg: &UNetConfig, n: usize, seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n * cfg.input_channels * cfg.frames * cfg.bins;
    let data = (0..len).map(|_| rng.random_range(0.0..scale)).collect();
    Tensor::from_vec(n, cfg.input_channels, cfg.frames, cfg.bins, data).unwrap()
}

pub fn random_like(t: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..t.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(t.n, t.c, t.h, t.w, data).unwrap()
}

/// `max |a - b| / max |b|`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale.max(1e-300)
}

#[derive(Debug, Clone, Copy)]
pub enum Stencil {
    /// `(f(h) - f(-h)) / 2h`
    Central2,
    /// `(-f(2h) + 8 f(h) - 8 f(-h) + f(-2h)) / 12h`
    Central4,
}

impl Stencil {
    fn apply(self, h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        match self {
            Stencil::Central2 => (f(h) - f(-h)) / (2.0 * h),
            Stencil::Central4 => (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h),
        }
    }
}

/// Central differences of `sum(output * upstream)` against the analytic
/// gradient for every parameter group and a sample of input entries.
pub fn finite_difference_errors(objective: &dyn Fn(&UNetWeights<f64>, &Tensor<f64>) -> f64, w: &UNetWeights<f64>, x: &Tensor<f64>, g: &Gradients<f64>, h: f64, stencil: Stencil) -> Vec<(String, f64)> {
    let rel = |an: &[f64], fd: &[f64]| {
        let num: f64 = an.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        // Bias gradients cancel under batch normalization; compare those absolutely.
        num / norm(an).max(norm(fd)).max(1.0)
    };
    let mut probe = w.clone();
    let mut out = Vec::new();
    for (name, range) in w.param_groups() {
        let mut fd = Vec::with_capacity(range.len());
        for i in range.clone() {
            let orig = probe.params[i];
            fd.push(stencil.apply(h, |d| {
                probe.params[i] = orig + d;
                objective(&probe, x)
            }));
            probe.params[i] = orig;
        }
        out.push((name, rel(&g.params[range], &fd)));
    }
    let mut xp = x.clone();
    let (mut fd, mut an) = (Vec::new(), Vec::new());
    for k in (0..x.data.len()).step_by(997) {
        let orig = xp.data[k];
        fd.push(stencil.apply(h, |d| {
            xp.data[k] = orig + d;
            objective(w, &xp)
        }));
        xp.data[k] = orig;
        an.push(g.input.data[k]);
    }
    out.push(("input".into(), rel(&an, &fd)));
    out
}

