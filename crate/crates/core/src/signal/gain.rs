use super::stft::{frame_count, FRAME_LEN, HOP};
use super::TimeSignal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainFit {
    pub gain: f64,
    /// Set when the prediction had no energy on the selected frames.
    pub degenerate: bool,
}

/// Least-squares scalar `g` minimizing `sum (g * pred - reference)^2` over the
/// given 20 ms frames (overlapping samples count once per frame).
pub fn least_squares_gain(pred: &[f64], reference: &[f64], frames: &[usize]) -> Result<GainFit> {
    if pred.len() != reference.len() {
        return Err(Error::Shape(format!(
            "prediction has {} samples, reference {}",
            pred.len(),
            reference.len()
        )));
    }
    if frames.is_empty() {
        return Err(Error::Empty("no near-end frames for gain compensation".into()));
    }
    let n_frames = frame_count(pred.len());
    let (mut cross, mut power) = (0.0, 0.0);
    for &k in frames {
        if k >= n_frames {
            return Err(Error::InvalidArgument(format!("frame {k} out of range ({n_frames})")));
        }
        let span = k * HOP..k * HOP + FRAME_LEN;
        for (p, r) in pred[span.clone()].iter().zip(&reference[span]) {
            cross += p * r;
            power += p * p;
        }
    }
    if power == 0.0 {
        return Ok(GainFit { gain: 0.0, degenerate: true });
    }
    Ok(GainFit { gain: cross / power, degenerate: false })
}

/// Rescales `pred` by the least-squares gain against `reference` on `near_end_frames`.
pub fn compensate_gain(
    pred: &TimeSignal,
    reference: &TimeSignal,
    near_end_frames: &[usize],
) -> Result<(TimeSignal, GainFit)> {
    let fit = least_squares_gain(pred.samples(), reference.samples(), near_end_frames)?;
    if fit.degenerate {
        log::warn!("prediction is silent on all near-end frames; gain set to 0");
    }
    Ok((pred.scaled(fit.gain), fit))
}
