//! 16-bit PCM mono WAV at 16 kHz. Everything else is rejected.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Role, TimeSignal, SAMPLE_RATE};
use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

pub fn wav_spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

pub fn read_wav(path: &Path, role: Role) -> Result<TimeSignal> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    let reject = |reason: String| Error::WavFormat { path: path.to_path_buf(), reason };
    if spec.channels != 1 {
        return Err(reject(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(reject(format!("{} Hz, expected {SAMPLE_RATE} Hz", spec.sample_rate)));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(reject(format!(
            "{:?} {}-bit samples, expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    TimeSignal::new(samples, role)
}

/// Quantizes to 16 bits; values beyond full scale are clipped.
pub fn write_wav(path: &Path, signal: &TimeSignal) -> Result<()> {
    let mut writer = WavWriter::create(path, wav_spec())?;
    for &x in signal.samples() {
        writer.write_sample(quantize(x))?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn quantize(x: f64) -> i16 {
    (x * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}
