use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Role, TimeSignal};
use crate::error::{Error, Result};

/// 20 ms analysis frame at 16 kHz.
pub const FRAME_LEN: usize = 320;
/// 50% overlap.
pub const HOP: usize = 160;
/// One-sided bins of a 320-point transform.
pub const N_BINS: usize = FRAME_LEN / 2 + 1;

/// Number of whole frames in `len` samples; trailing partial frames are dropped.
pub fn frame_count(len: usize) -> usize {
    if len < FRAME_LEN {
        0
    } else {
        (len - FRAME_LEN) / HOP + 1
    }
}

/// Splits a signal into 320-sample frames starting every 160 samples.
pub fn frame(signal: &TimeSignal) -> Result<Vec<&[f64]>> {
    let x = signal.samples();
    if x.len() < FRAME_LEN {
        return Err(Error::SignalTooShort { len: x.len(), min: FRAME_LEN });
    }
    Ok((0..frame_count(x.len())).map(|k| &x[k * HOP..k * HOP + FRAME_LEN]).collect())
}

/// Periodic Hann window. At hop `FRAME_LEN / 2` its shifted copies sum to exactly one,
/// so resynthesis uses a rectangular synthesis window with unit normalization.
pub fn analysis_window() -> Vec<f64> {
    (0..FRAME_LEN)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / FRAME_LEN as f64).cos())
        .collect()
}

/// Row-major `rows × N_BINS` real matrix (one row per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct AmpMatrix {
    rows: usize,
    data: Vec<f64>,
}

impl AmpMatrix {
    pub fn new(rows: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * N_BINS {
            return Err(Error::Shape(format!(
                "matrix data has {} values, expected {rows} x {N_BINS}",
                data.len()
            )));
        }
        Ok(Self { rows, data })
    }

    pub fn zeros(rows: usize) -> Self {
        Self { rows, data: vec![0.0; rows * N_BINS] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        N_BINS
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * N_BINS..(t + 1) * N_BINS]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * N_BINS..(t + 1) * N_BINS]
    }

    pub fn get(&self, t: usize, b: usize) -> f64 {
        self.data[t * N_BINS + b]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Copy of rows `start..start + count`.
    pub fn slice_rows(&self, start: usize, count: usize) -> AmpMatrix {
        AmpMatrix { rows: count, data: self.data[start * N_BINS..(start + count) * N_BINS].to_vec() }
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Amplitude and phase of a framed 320-point STFT.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub amplitudes: AmpMatrix,
    pub phases: AmpMatrix,
    /// Length of the source signal, kept so resynthesis can restore it.
    pub source_len: usize,
    pub role: Role,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.amplitudes.rows()
    }

    pub fn frame_len(&self) -> usize {
        FRAME_LEN
    }

    pub fn hop(&self) -> usize {
        HOP
    }

    /// Swaps in new amplitudes, keeping this spectrogram's phase.
    pub fn with_amplitudes(&self, amplitudes: AmpMatrix, role: Role) -> Result<Spectrogram> {
        if amplitudes.rows() != self.n_frames() {
            return Err(Error::Shape(format!(
                "{} amplitude frames vs {} phase frames",
                amplitudes.rows(),
                self.n_frames()
            )));
        }
        Ok(Spectrogram {
            amplitudes,
            phases: self.phases.clone(),
            source_len: self.source_len,
            role,
        })
    }
}

fn plan(inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(FRAME_LEN)
    } else {
        planner.plan_fft_forward(FRAME_LEN)
    }
}

/// Hann-windowed 320-point STFT at hop 160.
pub fn stft(signal: &TimeSignal) -> Result<Spectrogram> {
    let frames = frame(signal)?;
    let window = analysis_window();
    let fft = plan(false);
    let mut buf = vec![Complex64::new(0.0, 0.0); FRAME_LEN];
    let mut amps = AmpMatrix::zeros(frames.len());
    let mut phases = AmpMatrix::zeros(frames.len());
    for (t, fr) in frames.iter().enumerate() {
        for ((b, &x), &w) in buf.iter_mut().zip(fr.iter()).zip(window.iter()) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        let (a, p) = (amps.row_mut(t), phases.row_mut(t));
        for k in 0..N_BINS {
            a[k] = buf[k].norm();
            p[k] = buf[k].arg();
        }
    }
    Ok(Spectrogram { amplitudes: amps, phases, source_len: signal.len(), role: signal.role() })
}

/// Overlap-add resynthesis. The output has the source length; samples past the last
/// whole frame are zero.
pub fn istft(spec: &Spectrogram) -> Result<TimeSignal> {
    let n = spec.amplitudes.rows();
    if spec.phases.rows() != n {
        return Err(Error::Shape(format!(
            "amplitudes have {n} frames, phases have {}",
            spec.phases.rows()
        )));
    }
    let min_len = if n == 0 { 0 } else { (n - 1) * HOP + FRAME_LEN };
    let out_len = spec.source_len.max(min_len);
    let mut out = vec![0.0; out_len];
    let ifft = plan(true);
    let mut buf = vec![Complex64::new(0.0, 0.0); FRAME_LEN];
    let scale = 1.0 / FRAME_LEN as f64;
    for t in 0..n {
        let (a, p) = (spec.amplitudes.row(t), spec.phases.row(t));
        for k in 0..N_BINS {
            buf[k] = Complex64::from_polar(a[k], p[k]);
        }
        for k in N_BINS..FRAME_LEN {
            buf[k] = buf[FRAME_LEN - k].conj();
        }
        ifft.process(&mut buf);
        for (o, v) in out[t * HOP..t * HOP + FRAME_LEN].iter_mut().zip(buf.iter()) {
            *o += v.re * scale;
        }
    }
    TimeSignal::new(out, spec.role)
}
