use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unet::{Scalar, Tensor};

/// Weight of the variance term.
pub const VARIANCE_COEFF: f64 = 0.1;

/// Axis over which the prediction variance is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceAxis {
    /// One variance over every element of the batch.
    #[default]
    Global,
    /// Variance per frequency bin over batch and frames, averaged over bins.
    PerBin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub variance_axis: VarianceAxis,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.0, variance_axis: VarianceAxis::Global }
    }
}

impl LossConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

fn check<T: Scalar>(p: &Tensor<T>, d: &Tensor<T>, cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    if p.shape() != d.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", p.shape(), d.shape())));
    }
    if p.data.is_empty() {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    if !p.all_finite() {
        return Err(Error::NonFinite("loss prediction".into()));
    }
    if !d.all_finite() {
        return Err(Error::NonFinite("loss target".into()));
    }
    Ok(())
}

/// Per-element mean subtracted by the variance term: the global mean, or the
/// mean of the element's bin.
fn variance_means<T: Scalar>(p: &Tensor<T>, axis: VarianceAxis) -> Vec<f64> {
    match axis {
        VarianceAxis::Global => vec![p.data.iter().map(|v| v.as_f64()).sum::<f64>() / p.data.len() as f64],
        VarianceAxis::PerBin => {
            let w = p.w;
            let rows = p.data.len() / w;
            let mut m = vec![0.0; w];
            for row in p.data.chunks(w) {
                for (a, v) in m.iter_mut().zip(row) {
                    *a += v.as_f64();
                }
            }
            m.iter_mut().for_each(|a| *a /= rows as f64);
            m
        }
    }
}

fn mean_at(means: &[f64], k: usize, w: usize) -> f64 {
    if means.len() == 1 {
        means[0]
    } else {
        means[k % w]
    }
}

/// `J = mean((P-D)^2) + alpha mean(P^2) + 0.1 var(P) [alpha > 0]`, accumulated in f64.
pub fn loss_j<T: Scalar>(p: &Tensor<T>, d: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    check(p, d, cfg)?;
    let n = p.data.len() as f64;
    let (mut err, mut pow) = (0.0, 0.0);
    for (&a, &b) in p.data.iter().zip(&d.data) {
        let (a, b) = (a.as_f64(), b.as_f64());
        err += (a - b) * (a - b);
        pow += a * a;
    }
    let mut j = err / n + cfg.alpha * pow / n;
    if cfg.alpha > 0.0 {
        let means = variance_means(p, cfg.variance_axis);
        let var: f64 = p
            .data
            .iter()
            .enumerate()
            .map(|(k, v)| (v.as_f64() - mean_at(&means, k, p.w)).powi(2))
            .sum::<f64>()
            / n;
        j += VARIANCE_COEFF * var;
    }
    Ok(j)
}

/// Analytic `dJ/dP`.
pub fn loss_grad<T: Scalar>(p: &Tensor<T>, d: &Tensor<T>, cfg: &LossConfig) -> Result<Tensor<T>> {
    check(p, d, cfg)?;
    let n = p.data.len() as f64;
    let means = if cfg.alpha > 0.0 { Some(variance_means(p, cfg.variance_axis)) } else { None };
    let data = p
        .data
        .iter()
        .zip(&d.data)
        .enumerate()
        .map(|(k, (&a, &b))| {
            let (a, b) = (a.as_f64(), b.as_f64());
            let mut g = 2.0 * (a - b) / n + cfg.alpha * 2.0 * a / n;
            if let Some(m) = &means {
                g += VARIANCE_COEFF * 2.0 * (a - mean_at(m, k, p.w)) / n;
            }
            T::from_f64(g)
        })
        .collect();
    Tensor::from_vec(p.n, p.c, p.h, p.w, data)
}
