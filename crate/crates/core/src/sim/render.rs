use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Memoryless loudspeaker nonlinearity applied before the echo path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    None,
    /// Clip to `[-threshold, threshold]`.
    HardClip { threshold: f64 },
    /// `x - coeff * x^3`.
    MemorylessCubic { coeff: f64 },
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Nonlinearity::HardClip { threshold: 0.8 }
    }
}

impl Nonlinearity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Nonlinearity::HardClip { threshold } if !(threshold > 0.0 && threshold.is_finite()) => {
                Err(Error::InvalidArgument(format!("clip threshold {threshold} must be positive")))
            }
            Nonlinearity::MemorylessCubic { coeff } if !coeff.is_finite() => {
                Err(Error::InvalidArgument("cubic coefficient must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::None => x,
            Nonlinearity::HardClip { threshold } => x.clamp(-threshold, threshold),
            Nonlinearity::MemorylessCubic { coeff } => x - coeff * x * x * x,
        }
    }
}

/// Linear convolution truncated to `x.len()` samples, via one zero-padded FFT.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let (fwd, inv) = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    let pad = |s: &[f64]| {
        let mut v: Vec<Complex64> = s.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(u, v)| *u *= v);
    inv.process(&mut a);
    a[..x.len()].iter().map(|c| c.re / n as f64).collect()
}

fn check_rir(rir: &[f64]) -> Result<()> {
    if rir.is_empty() {
        return Err(Error::Empty("impulse response".into()));
    }
    if rir.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("impulse response".into()));
    }
    Ok(())
}

/// Echo at the microphone: `convolve(nonlinearity(far_end), rir)`, same
/// length as the far end.
pub fn render_echo(far_end: &[f64], rir: &[f64], nonlinearity: Nonlinearity) -> Result<Vec<f64>> {
    check_rir(rir)?;
    nonlinearity.validate()?;
    let driven: Vec<f64> = far_end.iter().map(|&x| nonlinearity.apply(x)).collect();
    let f = convolve(&driven, rir);
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rendered echo".into()));
    }
    Ok(f)
}

/// Echo through `before` until `start`, then a linear crossfade of
/// `crossfade` samples to `after`.
pub fn render_echo_change(
    far_end: &[f64],
    before: &[f64],
    after: &[f64],
    nonlinearity: Nonlinearity,
    start: usize,
    crossfade: usize,
) -> Result<Vec<f64>> {
    let a = render_echo(far_end, before, nonlinearity)?;
    let b = render_echo(far_end, after, nonlinearity)?;
    Ok(a
        .iter()
        .zip(&b)
        .enumerate()
        .map(|(i, (&u, &v))| {
            let g = if i < start {
                0.0
            } else if crossfade == 0 || i >= start + crossfade {
                1.0
            } else {
                (i - start) as f64 / crossfade as f64
            };
            (1.0 - g) * u + g * v
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_impulse_is_identity() {
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.3).sin()).collect();
        let f = render_echo(&x, &[1.0], Nonlinearity::None).unwrap();
        assert!(x.iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn clipped_square_wave() {
        let x: Vec<f64> = (0..400).map(|i| if (i / 20) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let h = [0.5, 0.25];
        let f = render_echo(&x, &h, Nonlinearity::HardClip { threshold: 0.5 }).unwrap();
        let clipped: Vec<f64> = x.iter().map(|v| v * 0.5).collect();
        for n in 1..x.len() {
            let want = 0.5 * clipped[n] + 0.25 * clipped[n - 1];
            assert!((f[n] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn crossfade_endpoints() {
        let x = vec![1.0; 100];
        let f = render_echo_change(&x, &[1.0], &[2.0], Nonlinearity::None, 40, 10).unwrap();
        assert!((f[39] - 1.0).abs() < 1e-12);
        assert!((f[45] - 1.5).abs() < 1e-12);
        assert!((f[50] - 2.0).abs() < 1e-12);
        assert!(render_echo(&x, &[], Nonlinearity::None).is_err());
    }
}
