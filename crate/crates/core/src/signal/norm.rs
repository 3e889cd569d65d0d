use serde::{Deserialize, Serialize};

use super::stft::{AmpMatrix, N_BINS};
use crate::error::{Error, Result};

/// Floor applied to a bin's dynamic range so constant bins do not divide by zero.
pub const RANGE_FLOOR: f64 = 1e-8;

/// Per-bin minimum and dynamic range fitted on training amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub bin_min: Vec<f64>,
    pub bin_range: Vec<f64>,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        if self.bin_min.len() != N_BINS || self.bin_range.len() != N_BINS {
            return Err(Error::Shape(format!(
                "norm stats have {}/{} bins, expected {N_BINS}",
                self.bin_min.len(),
                self.bin_range.len()
            )));
        }
        if self.bin_range.iter().any(|&r| !(r > 0.0)) || self.bin_min.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidArgument("norm stats must be finite with positive range".into()));
        }
        Ok(())
    }
}

/// Fits per-bin min / range over every frame of every matrix.
pub fn fit_norm<'a, I>(mats: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a AmpMatrix>,
{
    let mut lo = vec![f64::INFINITY; N_BINS];
    let mut hi = vec![f64::NEG_INFINITY; N_BINS];
    let mut frames = 0usize;
    for m in mats {
        for t in 0..m.rows() {
            for (b, &v) in m.row(t).iter().enumerate() {
                lo[b] = lo[b].min(v);
                hi[b] = hi[b].max(v);
            }
            frames += 1;
        }
    }
    if frames == 0 {
        return Err(Error::Empty("no frames to fit normalization statistics".into()));
    }
    let bin_range = lo.iter().zip(&hi).map(|(l, h)| (h - l).max(RANGE_FLOOR)).collect();
    Ok(NormStats { bin_min: lo, bin_range })
}

/// Affine per-bin map into the training range. Values outside the training
/// range pass through unclamped.
pub fn apply_norm(amps: &AmpMatrix, stats: &NormStats) -> Result<AmpMatrix> {
    stats.validate()?;
    let mut out = amps.clone();
    for t in 0..out.rows() {
        for (b, v) in out.row_mut(t).iter_mut().enumerate() {
            *v = (*v - stats.bin_min[b]) / stats.bin_range[b];
        }
    }
    Ok(out)
}

/// Inverse of [`apply_norm`], floored at zero.
pub fn invert_norm(pred: &AmpMatrix, stats: &NormStats) -> Result<AmpMatrix> {
    stats.validate()?;
    let mut out = pred.clone();
    for t in 0..out.rows() {
        for (b, v) in out.row_mut(t).iter_mut().enumerate() {
            *v = (*v * stats.bin_range[b] + stats.bin_min[b]).max(0.0);
        }
    }
    Ok(out)
}
