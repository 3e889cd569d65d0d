use crate::error::{Error, Result};
use crate::metrics::{measure_ser, measure_snr};

/// Mixture `m = d + f + w` with the scaled stems and the applied gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub m: Vec<f64>,
    pub f: Vec<f64>,
    pub w: Vec<f64>,
    pub echo_gain: f64,
    pub noise_gain: f64,
}

/// Gain that moves a measured ratio to the target: scaling the denominator
/// stem by `g` changes the ratio by `-20 log10 g`.
fn gain_for(measured_db: f64, target_db: f64) -> f64 {
    10f64.powf((measured_db - target_db) / 20.0)
}

fn scaled(x: &[f64], g: f64) -> Vec<f64> {
    x.iter().map(|v| v * g).collect()
}

/// Scales `f` to the target signal-to-echo ratio and `w` to the target
/// signal-to-noise ratio, both measured against `d` over mutually active
/// frames, and sums. A non-finite positive target removes the stem.
pub fn mix(d: &[f64], f: &[f64], w: &[f64], target_ser_db: f64, target_snr_db: f64) -> Result<Mixture> {
    if d.len() != f.len() || d.len() != w.len() {
        return Err(Error::Shape(format!("stem lengths {}, {}, {}", d.len(), f.len(), w.len())));
    }
    let stem_gain = |x: &[f64], target: f64, what: &str, measure: fn(&[f64], &[f64]) -> Result<Option<f64>>| {
        if target == f64::INFINITY {
            return Ok(0.0);
        }
        if !target.is_finite() {
            return Err(Error::InvalidArgument(format!("{what} target {target} dB")));
        }
        if d.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument(format!("near end is silent, {what} {target} dB cannot be set")));
        }
        match measure(d, x)? {
            Some(db) => Ok(gain_for(db, target)),
            None => Err(Error::InvalidArgument(format!("no frames where near end and {what} stem are both active"))),
        }
    };
    let echo_gain = stem_gain(f, target_ser_db, "SER", measure_ser)?;
    let noise_gain = stem_gain(w, target_snr_db, "SNR", measure_snr)?;
    let (f, w) = (scaled(f, echo_gain), scaled(w, noise_gain));
    let m = (0..d.len()).map(|i| d[i] + f[i] + w[i]).collect();
    Ok(Mixture { m, f, w, echo_gain, noise_gain })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(n: usize, k: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * k).sin() * 0.1).collect()
    }

    #[test]
    fn equal_energy_to_minus_ten() {
        let d = wave(3200, 0.05);
        let f = wave(3200, 0.05);
        let mx = mix(&d, &f, &vec![0.0; 3200], -10.0, f64::INFINITY).unwrap();
        assert!((mx.echo_gain - 10f64.sqrt()).abs() < 1e-12);
        assert!(mx.w.iter().all(|&v| v == 0.0));
        assert!((0..3200).all(|i| mx.m[i] == d[i] + mx.f[i] + mx.w[i]));
    }

    #[test]
    fn silent_near_end_rejected() {
        let z = vec![0.0; 3200];
        assert!(mix(&z, &wave(3200, 0.1), &z, -5.0, f64::INFINITY).is_err());
    }
}
