//! Time-domain signals and the STFT plumbing around them.

mod activity;
mod gain;
mod norm;
mod stft;
pub mod wav;

pub use activity::{active_frames, energy_to_dbfs, frame_energies, ACTIVE_DBFS};
pub use gain::{compensate_gain, least_squares_gain, GainFit};
pub use norm::{apply_norm, fit_norm, invert_norm, NormStats, RANGE_FLOOR};
pub use stft::{
    analysis_window, frame, frame_count, istft, stft, AmpMatrix, Spectrogram, FRAME_LEN, HOP,
    N_BINS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed pipeline sample rate.
pub const SAMPLE_RATE: u32 = 16_000;

/// What a signal represents in the echo-cancellation chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    FarEnd,
    NearEnd,
    Microphone,
    Echo,
    Noise,
    AecEstimate,
    AecError,
    Prediction,
}

impl Role {
    /// Short stem name used for files on disk.
    pub fn stem(self) -> &'static str {
        match self {
            Role::FarEnd => "r",
            Role::NearEnd => "d",
            Role::Microphone => "m",
            Role::Echo => "f",
            Role::Noise => "w",
            Role::AecEstimate => "a",
            Role::AecError => "e",
            Role::Prediction => "p",
        }
    }
}

/// Mono audio at [`SAMPLE_RATE`] tagged with its role.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    samples: Vec<f64>,
    role: Role,
}

impl TimeSignal {
    /// Wraps samples, rejecting NaN or infinite values.
    pub fn new(samples: Vec<f64>, role: Role) -> Result<Self> {
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{role:?} signal at sample {i}")));
        }
        Ok(Self { samples, role })
    }

    pub fn zeros(len: usize, role: Role) -> Self {
        Self { samples: vec![0.0; len], role }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { samples: self.samples.iter().map(|x| x * gain).collect(), role: self.role }
    }
}
