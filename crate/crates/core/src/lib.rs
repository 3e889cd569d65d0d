//! Residual echo suppression toolkit.
//!
//! A linear frequency-domain adaptive echo canceler feeds its error and echo
//! estimate, as STFT amplitudes, into a small depthwise-separable UNet that
//! predicts the near-end amplitude spectrum. The crate also carries the
//! training loop, a double-talk scenario simulator and segment-aware metrics.

pub mod aec;
pub mod error;
pub mod metrics;
pub mod model_file;
pub mod pipeline;
pub mod signal;
pub mod sim;
pub mod training;

pub use error::{Error, Result};
pub mod unet;
