//! Segment-aware objective metrics: ERLE, SAR, SDR and the SER/SNR mixing
//! ratios, with per-utterance and corpus aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{frame_count, frame_energies, FRAME_LEN, HOP};
use crate::sim::{Activity, ActivityLabels};

/// Energies below this are floored before taking logs.
pub const ENERGY_FLOOR: f64 = 1e-12;
/// Frame and utterance values are clamped to +-this many dB.
pub const DB_CAP: f64 = 80.0;
/// Relative activity threshold used by [`measure_ser`] and [`measure_snr`]:
/// a frame is active when it is within this many dB of the stem's loudest frame.
pub const RELATIVE_ACTIVE_DB: f64 = -40.0;

/// How frame ratios are combined into one utterance value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-frame dB values.
    #[default]
    FrameMean,
    /// Ratio of energies summed over the qualifying frames.
    EnergySum,
}

fn ratio_db(num: f64, den: f64) -> f64 {
    (10.0 * (num.max(ENERGY_FLOOR) / den.max(ENERGY_FLOOR)).log10()).clamp(-DB_CAP, DB_CAP)
}

fn check_aligned(a: &[f64], b: &[f64], labels: &ActivityLabels) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("signals have {} and {} samples", a.len(), b.len())));
    }
    let n = frame_count(a.len());
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {} frames", labels.len(), n)));
    }
    Ok(())
}

/// Per-frame energies of `num` and of `den_a - den_b` (or `den_a` alone).
fn frame_pair(num: &[f64], den: impl Fn(usize) -> f64, frames: &[usize]) -> Vec<(f64, f64)> {
    frames
        .iter()
        .map(|&k| {
            let s = k * HOP;
            let n: f64 = num[s..s + FRAME_LEN].iter().map(|v| v * v).sum();
            let d: f64 = (s..s + FRAME_LEN).map(|i| den(i).powi(2)).sum();
            (n, d)
        })
        .collect()
}

fn aggregate(pairs: &[(f64, f64)], how: Aggregation) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    Some(match how {
        Aggregation::FrameMean => pairs.iter().map(|&(n, d)| ratio_db(n, d)).sum::<f64>() / pairs.len() as f64,
        Aggregation::EnergySum => {
            let (n, d) = pairs.iter().fold((0.0, 0.0), |(a, b), &(n, d)| (a + n, b + d));
            ratio_db(n, d)
        }
    })
}

/// Echo return loss enhancement over far-end single-talk frames:
/// 10 log10 ||e||^2 / ||p||^2.
pub fn erle(e: &[f64], p: &[f64], labels: &ActivityLabels, how: Aggregation) -> Result<Option<f64>> {
    check_aligned(e, p, labels)?;
    let frames = labels.indices(Activity::FarEndSingleTalk);
    Ok(aggregate(&frame_pair(e, |i| p[i], &frames), how))
}

fn distortion(d: &[f64], p: &[f64], labels: &ActivityLabels, class: Activity, how: Aggregation) -> Result<Option<f64>> {
    check_aligned(d, p, labels)?;
    let frames = labels.indices(class);
    Ok(aggregate(&frame_pair(d, |i| p[i] - d[i], &frames), how))
}

/// Signal-to-artifacts ratio over near-end single-talk frames:
/// 10 log10 ||d||^2 / ||p - d||^2.
pub fn sar(d: &[f64], p: &[f64], labels: &ActivityLabels, how: Aggregation) -> Result<Option<f64>> {
    distortion(d, p, labels, Activity::NearEndSingleTalk, how)
}

/// Signal-to-distortion ratio over double-talk frames.
pub fn sdr(d: &[f64], p: &[f64], labels: &ActivityLabels, how: Aggregation) -> Result<Option<f64>> {
    distortion(d, p, labels, Activity::DoubleTalk, how)
}

/// Frames within [`RELATIVE_ACTIVE_DB`] of the loudest frame.
pub fn relative_active(energies: &[f64]) -> Vec<bool> {
    let max = energies.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![false; energies.len()];
    }
    let thr = max * 10f64.powf(RELATIVE_ACTIVE_DB / 10.0);
    energies.iter().map(|&e| e > 0.0 && e >= thr).collect()
}

/// Ratio of summed energies over mutually active frames, in dB. `None` when
/// no frame is active in both or the denominator has no energy there.
fn mutual_ratio(num: &[f64], den: &[f64]) -> Result<Option<f64>> {
    if num.len() != den.len() {
        return Err(Error::Shape(format!("signals have {} and {} samples", num.len(), den.len())));
    }
    let (en, ed) = (frame_energies(num), frame_energies(den));
    let (an, ad) = (relative_active(&en), relative_active(&ed));
    let (mut sn, mut sd) = (0.0, 0.0);
    for k in 0..en.len() {
        if an[k] && ad[k] {
            sn += en[k];
            sd += ed[k];
        }
    }
    if sd <= 0.0 || sn <= 0.0 {
        return Ok(None);
    }
    Ok(Some(10.0 * (sn / sd).log10()))
}

/// Signal-to-echo ratio 10 log10 ||d||^2 / ||f||^2 over frames where both
/// stems are active.
pub fn measure_ser(d: &[f64], f: &[f64]) -> Result<Option<f64>> {
    mutual_ratio(d, f)
}

/// Signal-to-noise ratio 10 log10 ||d||^2 / ||w||^2 over frames where both
/// stems are active.
pub fn measure_snr(d: &[f64], w: &[f64]) -> Result<Option<f64>> {
    mutual_ratio(d, w)
}

/// Metric values of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub name: String,
    pub erle_db: Option<f64>,
    pub sar_db: Option<f64>,
    pub sdr_db: Option<f64>,
    pub far_end_frames: usize,
    pub near_end_frames: usize,
    pub double_talk_frames: usize,
    pub silence_frames: usize,
}

impl UtteranceMetrics {
    /// ERLE from (e, p), SAR and SDR from (d, p).
    pub fn compute(
        name: &str,
        e: &[f64],
        d: &[f64],
        p: &[f64],
        labels: &ActivityLabels,
        how: Aggregation,
    ) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            erle_db: erle(e, p, labels, how)?,
            sar_db: sar(d, p, labels, how)?,
            sdr_db: sdr(d, p, labels, how)?,
            far_end_frames: labels.count(Activity::FarEndSingleTalk),
            near_end_frames: labels.count(Activity::NearEndSingleTalk),
            double_talk_frames: labels.count(Activity::DoubleTalk),
            silence_frames: labels.count(Activity::Silence),
        })
    }
}

/// Sample mean and standard deviation across utterances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    /// `None` for an empty set. The std of a single value is 0.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, count: n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aggregation: Aggregation,
    pub utterances: Vec<UtteranceMetrics>,
    pub erle_db: Option<Summary>,
    pub sar_db: Option<Summary>,
    pub sdr_db: Option<Summary>,
}

impl MetricsReport {
    pub fn new(utterances: Vec<UtteranceMetrics>, aggregation: Aggregation) -> Self {
        let col = |f: fn(&UtteranceMetrics) -> Option<f64>| -> Option<Summary> {
            Summary::of(&utterances.iter().filter_map(f).collect::<Vec<_>>())
        };
        Self {
            aggregation,
            erle_db: col(|u| u.erle_db),
            sar_db: col(|u| u.sar_db),
            sdr_db: col(|u| u.sdr_db),
            utterances,
        }
    }

    /// Flat `key = value` lines, one per number.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let agg = match self.aggregation {
            Aggregation::FrameMean => "frame_mean",
            Aggregation::EnergySum => "energy_sum",
        };
        let _ = writeln!(s, "aggregation = {agg}");
        let _ = writeln!(s, "utterances = {}", self.utterances.len());
        for (name, sum) in [("erle_db", self.erle_db), ("sar_db", self.sar_db), ("sdr_db", self.sdr_db)] {
            if let Some(x) = sum {
                let _ = writeln!(s, "corpus.{name}.mean = {}", x.mean);
                let _ = writeln!(s, "corpus.{name}.std = {}", x.std);
                let _ = writeln!(s, "corpus.{name}.count = {}", x.count);
            }
        }
        for u in &self.utterances {
            for (name, v) in [("erle_db", u.erle_db), ("sar_db", u.sar_db), ("sdr_db", u.sdr_db)] {
                if let Some(v) = v {
                    let _ = writeln!(s, "{}.{name} = {v}", u.name);
                }
            }
            let _ = writeln!(s, "{}.frames.far_end_single_talk = {}", u.name, u.far_end_frames);
            let _ = writeln!(s, "{}.frames.near_end_single_talk = {}", u.name, u.near_end_frames);
            let _ = writeln!(s, "{}.frames.double_talk = {}", u.name, u.double_talk_frames);
            let _ = writeln!(s, "{}.frames.silence = {}", u.name, u.silence_frames);
        }
        s
    }

    /// Human-readable table, one row per utterance plus a corpus mean / std row.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let sum = |v: Option<Summary>| v.map_or("-".to_string(), |x| format!("{:.2} / {:.2}", x.mean, x.std));
        let width = self.utterances.iter().map(|u| u.name.len()).max().unwrap_or(0).max(10);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$} | {:>15} | {:>15} | {:>15}", "utterance", "ERLE [dB]", "SAR [dB]", "SDR [dB]");
        let _ = writeln!(s, "{}", "-".repeat(width + 57));
        for u in &self.utterances {
            let _ = writeln!(
                s,
                "{:<width$} | {:>15} | {:>15} | {:>15}",
                u.name,
                cell(u.erle_db),
                cell(u.sar_db),
                cell(u.sdr_db)
            );
        }
        let _ = writeln!(s, "{}", "-".repeat(width + 57));
        let _ = writeln!(
            s,
            "{:<width$} | {:>15} | {:>15} | {:>15}",
            "mean / std",
            sum(self.erle_db),
            sum(self.sar_db),
            sum(self.sdr_db)
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, a: Activity) -> ActivityLabels {
        ActivityLabels { frames: vec![a; frame_count(n)], echo_changes: vec![] }
    }

    fn tone(n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.3 * (i as f64 * 0.07).sin() + 0.01).collect()
    }

    #[test]
    fn identity_erle_is_zero() {
        let e = tone(1600);
        let l = labels(1600, Activity::FarEndSingleTalk);
        assert_eq!(erle(&e, &e, &l, Aggregation::FrameMean).unwrap(), Some(0.0));
        let p: Vec<f64> = e.iter().map(|v| v / 10.0).collect();
        let v = erle(&e, &p, &l, Aggregation::FrameMean).unwrap().unwrap();
        assert!((v - 20.0).abs() < 1e-9);
    }

    #[test]
    fn exact_reconstruction_is_capped() {
        let d = tone(1600);
        let l = labels(1600, Activity::NearEndSingleTalk);
        assert_eq!(sar(&d, &d, &l, Aggregation::FrameMean).unwrap(), Some(DB_CAP));
        let p: Vec<f64> = d.iter().map(|v| 2.0 * v).collect();
        assert!(sar(&d, &p, &l, Aggregation::EnergySum).unwrap().unwrap().abs() < 1e-12);
        assert_eq!(sdr(&d, &p, &l, Aggregation::FrameMean).unwrap(), None);
    }

    #[test]
    fn half_amplitude_noise_is_six_db() {
        let d = tone(3200);
        let w: Vec<f64> = d.iter().map(|v| v / 2.0).collect();
        let v = measure_snr(&d, &w).unwrap().unwrap();
        assert!((v - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert_eq!(measure_ser(&d, &vec![0.0; 3200]).unwrap(), None);
    }

    #[test]
    fn misaligned_labels_rejected() {
        let d = tone(1600);
        assert!(erle(&d, &d, &labels(1000, Activity::Silence), Aggregation::FrameMean).is_err());
    }

    #[test]
    fn summary_and_report() {
        let s = Summary::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.count), (2.0, 2));
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert!(Summary::of(&[]).is_none());
        let u = UtteranceMetrics {
            name: "u0".into(),
            erle_db: Some(10.0),
            sar_db: None,
            sdr_db: Some(3.0),
            far_end_frames: 5,
            near_end_frames: 0,
            double_talk_frames: 2,
            silence_frames: 1,
        };
        let r = MetricsReport::new(vec![u], Aggregation::FrameMean);
        assert!(r.sar_db.is_none());
        let kv = r.to_key_value();
        assert!(kv.contains("corpus.erle_db.mean = 10"));
        assert!(!kv.contains("u0.sar_db"));
        assert!(r.to_table().contains("mean / std"));
    }
}
