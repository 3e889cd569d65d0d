//! Speech-like test sources: syllable-rate modulated, formant-filtered
//! glottal pulse trains with occasional noise-excited (fricative) syllables.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::signal::SAMPLE_RATE;

/// Two-pole resonator with a persistent state.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Self { a1: 0.0, a2: 0.0, gain: 1.0, y1: 0.0, y2: 0.0 }
    }

    fn tune(&mut self, freq: f64, bandwidth: f64) {
        let fs = SAMPLE_RATE as f64;
        let r = (-std::f64::consts::PI * bandwidth / fs).exp();
        let theta = 2.0 * std::f64::consts::PI * freq / fs;
        self.a1 = 2.0 * r * theta.cos();
        self.a2 = -r * r;
        self.gain = 1.0 - r;
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

const FORMANTS: [(f64, f64); 3] = [(300.0, 800.0), (900.0, 2300.0), (2400.0, 3200.0)];

/// One talker's continuous talk spurt of `len` samples, roughly unit RMS.
/// Syllables last 120-280 ms and their envelope never drops more than about
/// 8 dB below the peak, so the spurt stays active frame by frame.
pub fn synth_speech<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let f0_base = rng.random_range(90.0..220.0);
    let mut out = Vec::with_capacity(len);
    let mut bank: Vec<Resonator> = (0..3).map(|_| Resonator::new()).collect();
    let mut phase = 0.0f64;
    let mut t_total = 0usize;
    while out.len() < len {
        let syl = ((rng.random_range(0.12..0.28) * fs) as usize).min(len - out.len()).max(1);
        let voiced = rng.random_bool(0.8);
        for (res, &(lo, hi)) in bank.iter_mut().zip(&FORMANTS) {
            res.tune(rng.random_range(lo..hi), rng.random_range(80.0..160.0));
        }
        let glide = rng.random_range(-0.15..0.15);
        let level = rng.random_range(0.8..1.0);
        for i in 0..syl {
            let u = i as f64 / syl as f64;
            let env = level * (0.5 + 0.5 * (std::f64::consts::PI * u).sin().powi(2));
            let excitation = if voiced {
                let vibrato = 1.0 + 0.02 * (2.0 * std::f64::consts::PI * 5.0 * t_total as f64 / fs).sin();
                let f0 = f0_base * (1.0 + glide * u) * vibrato;
                phase += f0 / fs;
                let pulse = if phase >= 1.0 {
                    phase -= 1.0;
                    1.0
                } else {
                    0.0
                };
                let breath: f64 = StandardNormal.sample(rng);
                pulse * 12.0 + 0.05 * breath
            } else {
                let n: f64 = StandardNormal.sample(rng);
                0.6 * n
            };
            let mut y = 0.0;
            for res in bank.iter_mut() {
                y += res.tick(excitation);
            }
            out.push(env * y);
            t_total += 1;
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / out.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}
