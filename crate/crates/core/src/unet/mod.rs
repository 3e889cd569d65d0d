//! Dual-input, single-output UNet built from depthwise-separable layers.
//!
//! Topology (widths `w1..w5`, input padded to `pad_frames × pad_bins`):
//!
//! ```text
//! enc1 (2→w1) ─pool─ enc2 (w1→w2) ─pool─ enc3 ─pool─ enc4 ─pool─ enc5 (w4→w5)
//!   │                  │                  │            │            │
//! dec1 (2w1→w1) ─up─ dec2 (2w2→w1) ─up─ dec3 ─up─ dec4 ─up─ dec5 (w5→w4)
//!   │
//! head: 1×1 (w1→1) + ReLU, cropped back to `frames × bins`
//! ```
//!
//! Every unit is two layers of depthwise 3×3 → pointwise 1×1 → batch norm →
//! ReLU. Decoder units `dec1..dec4` see `[skip, upsampled]` concatenated.

mod model;
pub mod ops;
mod scalar;
mod tensor;
mod weights;

pub use model::{backward, forward, forward_frozen, forward_with, update_running_stats, Ablation, ForwardCache, Gradients, Mode};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use weights::{LayerShape, LayerView, UNetWeights, HEAD_BIAS_INIT};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width multipliers applied to `base_width` for the five levels.
pub const WIDTH_MULTIPLIERS: [usize; 5] = [1, 2, 4, 8, 32];
pub const LEVELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub widths: [usize; LEVELS],
    pub input_channels: usize,
    pub output_channels: usize,
    /// Frames per input block.
    pub frames: usize,
    pub bins: usize,
    pub pad_frames: usize,
    pub pad_bins: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self::with_base_width(8)
    }
}

impl UNetConfig {
    pub fn with_base_width(base: usize) -> Self {
        Self {
            widths: WIDTH_MULTIPLIERS.map(|m| m * base),
            input_channels: 2,
            output_channels: 1,
            frames: 30,
            bins: 161,
            pad_frames: 32,
            pad_bins: 176,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn base_width(&self) -> usize {
        self.widths[0]
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1 << (LEVELS - 1);
        if self.pad_frames % div != 0 || self.pad_bins % div != 0 {
            return Err(Error::InvalidArgument(format!(
                "padded shape {}x{} must be divisible by {div}",
                self.pad_frames, self.pad_bins
            )));
        }
        if self.pad_frames < self.frames || self.pad_bins < self.bins {
            return Err(Error::InvalidArgument("padded shape smaller than input".into()));
        }
        if self.input_channels != 2 || self.output_channels != 1 {
            return Err(Error::InvalidArgument("network maps 2 channels to 1".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        Ok(())
    }

    /// Separable layers in declared (serialization) order, with their level.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let w = self.widths;
        let mut layers = Vec::with_capacity(4 * LEVELS);
        let mut c_in = self.input_channels;
        for (lvl, &wl) in w.iter().enumerate() {
            layers.push(LayerShape { name: format!("enc{}.0", lvl + 1), level: lvl, c_in, c_out: wl });
            layers.push(LayerShape { name: format!("enc{}.1", lvl + 1), level: lvl, c_in: wl, c_out: wl });
            c_in = wl;
        }
        for lvl in (0..LEVELS).rev() {
            let c_out = if lvl == 0 { w[0] } else { w[lvl - 1] };
            let unit_in = if lvl == LEVELS - 1 { w[lvl] } else { w[lvl] + c_in };
            layers.push(LayerShape { name: format!("dec{}.0", lvl + 1), level: lvl, c_in: unit_in, c_out });
            layers.push(LayerShape { name: format!("dec{}.1", lvl + 1), level: lvl, c_in: c_out, c_out });
            c_in = c_out;
        }
        layers
    }

    /// Spatial size `(frames, bins)` of a level.
    pub fn level_shape(&self, level: usize) -> (usize, usize) {
        (self.pad_frames >> level, self.pad_bins >> level)
    }
}

/// Parameter counts of a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// Kernels, biases, batch-norm scale and shift, head.
    pub trainable: usize,
    /// Batch-norm running mean and variance.
    pub running: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.trainable + self.running
    }
}

/// Trainable parameters of one separable layer.
pub fn layer_params(c_in: usize, c_out: usize) -> usize {
    9 * c_in + c_in * c_out + c_out + 2 * c_out
}

pub fn count_params(cfg: &UNetConfig) -> ParamCount {
    let layers = cfg.layer_shapes();
    let trainable = layers.iter().map(|l| layer_params(l.c_in, l.c_out)).sum::<usize>()
        + cfg.widths[0] * cfg.output_channels
        + cfg.output_channels;
    let running = layers.iter().map(|l| 2 * l.c_out).sum();
    ParamCount { trainable, running }
}

/// Convolution multiply-adds of one forward pass, per level.
pub fn macs_per_level(cfg: &UNetConfig) -> [f64; LEVELS] {
    let mut out = [0.0; LEVELS];
    for l in cfg.layer_shapes().into_iter().filter(|l| l.c_out > 0) {
        let (h, w) = cfg.level_shape(l.level);
        out[l.level] += (h * w) as f64 * (9 * l.c_in + l.c_in * l.c_out) as f64;
    }
    let (h, w) = cfg.level_shape(0);
    out[0] += (h * w * cfg.widths[0] * cfg.output_channels) as f64;
    out
}

/// Flops per second of audio at `passes_per_second` forward passes (a
/// multiply-add counts as two flops).
pub fn count_flops(cfg: &UNetConfig, passes_per_second: f64) -> f64 {
    2.0 * macs_per_level(cfg).iter().sum::<f64>() * passes_per_second
}
