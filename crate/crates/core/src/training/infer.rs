use serde::{Deserialize, Serialize};

use super::data::{UtteranceSpectra, BLOCK_FRAMES};
use crate::error::{Error, Result};
use crate::signal::{
    active_frames, apply_norm, compensate_gain, invert_norm, istft, AmpMatrix, GainFit, NormStats, Role, TimeSignal,
    ACTIVE_DBFS, N_BINS,
};
use crate::unet::{forward, Mode, Tensor, UNetWeights};

/// Which frame of each sliding window becomes that step's prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitFrame {
    #[default]
    Last,
    Center,
}

impl EmitFrame {
    fn offset(self) -> usize {
        match self {
            EmitFrame::Last => BLOCK_FRAMES - 1,
            EmitFrame::Center => BLOCK_FRAMES / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub emit: EmitFrame,
    /// Windows evaluated per network call.
    pub windows_per_batch: usize,
    /// Level below which the AEC estimate counts as silent when picking
    /// frames for gain compensation.
    pub activity_dbfs: f64,
    pub gain_compensation: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { emit: EmitFrame::Last, windows_per_batch: 16, activity_dbfs: ACTIVE_DBFS, gain_compensation: true }
    }
}

#[derive(Debug, Clone)]
pub struct InferOutput {
    pub prediction: TimeSignal,
    /// Number of 30-frame windows the network evaluated.
    pub windows: usize,
    pub gain: Option<GainFit>,
}

/// Normalized predictions, one frame per window step. Frames before the first
/// emitted frame come from the first window, frames after the last from the
/// last window.
pub fn predict_frames(
    error: &AmpMatrix,
    estimate: &AmpMatrix,
    weights: &UNetWeights<f32>,
    stats: &NormStats,
    cfg: &InferConfig,
) -> Result<(AmpMatrix, usize)> {
    let t = error.rows();
    if estimate.rows() != t {
        return Err(Error::Shape(format!("{t} error frames vs {} estimate frames", estimate.rows())));
    }
    if t < BLOCK_FRAMES {
        return Err(Error::SignalTooShort { len: t, min: BLOCK_FRAMES });
    }
    let e = apply_norm(error, stats)?;
    let a = apply_norm(estimate, stats)?;
    let windows = t - BLOCK_FRAMES + 1;
    let block = BLOCK_FRAMES * N_BINS;
    let offset = cfg.emit.offset();
    let mut out = AmpMatrix::zeros(t);
    let per_batch = cfg.windows_per_batch.max(1);
    let mut start = 0;
    while start < windows {
        let n = per_batch.min(windows - start);
        let mut x = Vec::with_capacity(n * 2 * block);
        for w in start..start + n {
            let span = w * N_BINS..(w + BLOCK_FRAMES) * N_BINS;
            x.extend(e.as_slice()[span.clone()].iter().map(|&v| v as f32));
            x.extend(a.as_slice()[span].iter().map(|&v| v as f32));
        }
        let x = Tensor::from_vec(n, 2, BLOCK_FRAMES, N_BINS, x)?;
        let (y, _) = forward(weights, &x, Mode::Eval)?;
        for k in 0..n {
            let w = start + k;
            let pred = y.sample(k);
            let mut emit = |frame_in_window: usize| {
                let src = &pred[frame_in_window * N_BINS..(frame_in_window + 1) * N_BINS];
                for (o, &v) in out.row_mut(w + frame_in_window).iter_mut().zip(src) {
                    *o = v as f64;
                }
            };
            if w == 0 {
                (0..offset).for_each(&mut emit);
            }
            emit(offset);
            if w + 1 == windows {
                (offset + 1..BLOCK_FRAMES).for_each(&mut emit);
            }
        }
        start += n;
    }
    Ok((out, windows))
}

/// Frames that look like near-end speech without echo: the AEC estimate is
/// silent and the error is active.
pub fn estimated_near_end_frames(error: &TimeSignal, estimate: &TimeSignal, threshold_dbfs: f64) -> Vec<usize> {
    let e = active_frames(error.samples(), threshold_dbfs);
    let a = active_frames(estimate.samples(), threshold_dbfs);
    e.iter().zip(&a).enumerate().filter(|(_, (&e, &a))| e && !a).map(|(k, _)| k).collect()
}

/// Full resynthesis path: sliding-window prediction, inverse normalization,
/// overlap-add with the error phase, then gain compensation.
pub fn infer_stream(
    error: &TimeSignal,
    estimate: &TimeSignal,
    weights: &UNetWeights<f32>,
    stats: &NormStats,
    cfg: &InferConfig,
) -> Result<InferOutput> {
    let utt = UtteranceSpectra::new(error, estimate, None).map_err(|e| match e {
        Error::SignalTooShort { len, min } => Error::InvalidArgument(format!(
            "signal of {len} samples is shorter than one frame ({min}); zero-pad it to at least 30 frames"
        )),
        other => other,
    })?;
    let (pred, windows) = predict_frames(&utt.error.amplitudes, &utt.estimate.amplitudes, weights, stats, cfg)
        .map_err(|e| match e {
            Error::SignalTooShort { len, min } => Error::InvalidArgument(format!(
                "input has {len} frames but a window needs {min}; zero-pad the signals at the caller"
            )),
            other => other,
        })?;
    let amps = invert_norm(&pred, stats)?;
    let spec = utt.error.with_amplitudes(amps, Role::Prediction)?;
    let raw = istft(&spec)?;
    if !cfg.gain_compensation {
        return Ok(InferOutput { prediction: raw, windows, gain: None });
    }
    let frames = estimated_near_end_frames(error, estimate, cfg.activity_dbfs);
    if frames.is_empty() {
        log::warn!("no near-end frames detected; gain compensation skipped");
        return Ok(InferOutput { prediction: raw, windows, gain: None });
    }
    let (prediction, fit) = compensate_gain(&raw, error, &frames)?;
    Ok(InferOutput { prediction, windows, gain: Some(fit) })
}
