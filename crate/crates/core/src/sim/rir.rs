use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SAMPLE_RATE;

/// Recipe for a synthetic room impulse response: a direct-path spike followed
/// by an exponentially decaying white-noise tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirSpec {
    /// Time for the tail to decay by 60 dB, in seconds.
    pub rt60_s: f64,
    /// Direct-to-reverberant energy ratio.
    #[serde(default)]
    pub drr_db: f64,
    pub seed: u64,
}

impl RirSpec {
    pub const RT60_RANGE: (f64, f64) = (0.3, 0.6);

    pub fn new(rt60_s: f64, seed: u64) -> Self {
        Self { rt60_s, drr_db: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = Self::RT60_RANGE;
        if !(lo..=hi).contains(&self.rt60_s) {
            return Err(Error::InvalidArgument(format!("RT60 {} s outside [{lo}, {hi}]", self.rt60_s)));
        }
        if !self.drr_db.is_finite() {
            return Err(Error::InvalidArgument("direct-to-reverberant ratio must be finite".into()));
        }
        Ok(())
    }

    /// Taps up to the -60 dB point. The direct path sits 1-3 ms in and has
    /// unit amplitude.
    pub fn render(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let fs = SAMPLE_RATE as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let delay = rng.random_range(16..=48usize);
        let tail_len = (self.rt60_s * fs).ceil() as usize;
        let decay = 3.0 * std::f64::consts::LN_10 / (self.rt60_s * fs); // amplitude e-fold per sample
        let mut h = vec![0.0; delay + 1 + tail_len];
        h[delay] = 1.0;
        let mut tail_energy = 0.0;
        for n in 1..=tail_len {
            let g: f64 = StandardNormal.sample(&mut rng);
            let v = g * (-decay * n as f64).exp();
            h[delay + n] = v;
            tail_energy += v * v;
        }
        let want = 10f64.powf(-self.drr_db / 10.0);
        let s = (want / tail_energy).sqrt();
        h[delay + 1..].iter_mut().for_each(|v| *v *= s);
        Ok(h)
    }
}
