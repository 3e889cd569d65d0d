//! Synthetic double-talk scenarios: far-end and near-end sources, a synthetic
//! echo path with an optional mid-utterance change, loudspeaker nonlinearity,
//! SER/SNR-controlled mixing and per-frame activity labels.

mod labels;
mod mix;
mod render;
mod rir;
mod speech;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use labels::{Activity, ActivityLabels};
pub use mix::{mix, Mixture};
pub use render::{convolve, render_echo, render_echo_change, Nonlinearity};
pub use rir::RirSpec;
pub use speech::synth_speech;

use crate::error::{Error, Result};
use crate::metrics::{measure_ser, measure_snr, relative_active};
use crate::signal::wav::{quantize, read_wav, write_wav};
use crate::signal::{frame_energies, Role, TimeSignal, ACTIVE_DBFS, FRAME_LEN, HOP, SAMPLE_RATE};

/// Crossfade length of an echo-path change (50 ms).
pub const CROSSFADE_SAMPLES: usize = 800;
/// Allowed SER targets.
pub const SER_RANGE_DB: (f64, f64) = (-20.0, 10.0);
/// Silence before the first and after the last talk spurt.
const LEAD_S: f64 = 0.25;
/// Mixtures are scaled down to keep this much headroom.
const MAX_PEAK: f64 = 0.9;

/// Which talkers are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TalkMode {
    FarEndSingleTalk,
    NearEndSingleTalk,
    DoubleTalk,
}

impl TalkMode {
    pub const ALL: [TalkMode; 3] = [TalkMode::FarEndSingleTalk, TalkMode::NearEndSingleTalk, TalkMode::DoubleTalk];

    pub fn as_str(self) -> &'static str {
        match self {
            TalkMode::FarEndSingleTalk => "far_end_single_talk",
            TalkMode::NearEndSingleTalk => "near_end_single_talk",
            TalkMode::DoubleTalk => "double_talk",
        }
    }

    fn has_far(self) -> bool {
        self != TalkMode::NearEndSingleTalk
    }
}

/// Where a talker's speech comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Synthetic { seed: u64 },
    /// 16 kHz mono PCM file; truncated or zero-padded to the talk spurt.
    Wav { path: PathBuf },
}

impl SourceSpec {
    fn load(&self, len: usize) -> Result<Vec<f64>> {
        if len < SAMPLE_RATE as usize {
            return Err(Error::SignalTooShort { len, min: SAMPLE_RATE as usize });
        }
        match self {
            SourceSpec::Synthetic { seed } => Ok(synth_speech(len, &mut ChaCha8Rng::seed_from_u64(*seed))),
            SourceSpec::Wav { path } => {
                let mut x = read_wav(path, Role::NearEnd)?.into_samples();
                if x.len() < SAMPLE_RATE as usize {
                    return Err(Error::SignalTooShort { len: x.len(), min: SAMPLE_RATE as usize });
                }
                x.resize(len, 0.0);
                Ok(x)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoChange {
    pub time_s: f64,
    pub new_rir: RirSpec,
}

/// Full recipe of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub mode: TalkMode,
    pub duration_s: f64,
    pub near_end_source: SourceSpec,
    pub far_end_source: SourceSpec,
    pub rir: RirSpec,
    pub nonlinearity: Nonlinearity,
    pub target_ser_db: f64,
    /// `None` adds no noise.
    pub target_snr_db: Option<f64>,
    pub overlap_fraction: f64,
    /// Active-frame level of the near end.
    pub near_level_dbfs: f64,
    /// Active-frame level of the far end driving the loudspeaker.
    pub far_level_dbfs: f64,
    pub echo_change: Option<EchoChange>,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Double talk over `duration_s` with synthetic sources and defaults
    /// elsewhere.
    pub fn double_talk(duration_s: f64, seed: u64) -> Self {
        Self {
            mode: TalkMode::DoubleTalk,
            duration_s,
            near_end_source: SourceSpec::Synthetic { seed: seed.wrapping_mul(2).wrapping_add(1) },
            far_end_source: SourceSpec::Synthetic { seed: seed.wrapping_mul(2).wrapping_add(2) },
            rir: RirSpec::new(0.3, seed),
            nonlinearity: Nonlinearity::default(),
            target_ser_db: -5.0,
            target_snr_db: Some(35.0),
            overlap_fraction: 0.9,
            near_level_dbfs: -26.0,
            far_level_dbfs: -18.0,
            echo_change: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.duration_s >= 1.0 && self.duration_s.is_finite()) {
            return bad(format!("duration {} s, need at least 1 s", self.duration_s));
        }
        let (lo, hi) = SER_RANGE_DB;
        if !(lo..=hi).contains(&self.target_ser_db) {
            return bad(format!("target SER {} dB outside [{lo}, {hi}]", self.target_ser_db));
        }
        if let Some(snr) = self.target_snr_db {
            if !snr.is_finite() {
                return bad(format!("target SNR {snr} dB"));
            }
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return bad(format!("overlap fraction {} outside [0, 1]", self.overlap_fraction));
        }
        if !(self.near_level_dbfs < 0.0 && self.far_level_dbfs < 0.0) {
            return bad("source levels must be below 0 dBFS".into());
        }
        self.rir.validate()?;
        self.nonlinearity.validate()?;
        if let Some(c) = &self.echo_change {
            if !(c.time_s > 0.0 && c.time_s < self.duration_s) {
                return bad(format!("echo change at {} s outside the utterance", c.time_s));
            }
            c.new_rir.validate()?;
        }
        Ok(())
    }
}

/// Record of an applied echo-path change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoChangeLog {
    pub time_s: f64,
    pub sample: usize,
    pub frame: usize,
    pub crossfade_samples: usize,
}

/// How the echo and noise stems were scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    pub echo_gain: f64,
    pub noise_gain: f64,
    /// Common gain applied to d, f and w to keep the mixture below clipping.
    pub headroom_gain: f64,
    /// `true` when a ratio was set against the near end over mutually active
    /// frames; `false` when it was set against the nominal near-end level
    /// because the near end is absent.
    pub ser_measured_against_near_end: bool,
    pub measured_ser_db: Option<f64>,
    pub measured_snr_db: Option<f64>,
}

/// A generated utterance with all stems on the 16-bit grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub m: TimeSignal,
    pub r: TimeSignal,
    pub d: TimeSignal,
    pub f: TimeSignal,
    pub w: TimeSignal,
    pub labels: ActivityLabels,
    pub echo_change: Option<EchoChangeLog>,
    pub mix: MixReport,
}

fn on_grid(x: f64) -> f64 {
    quantize(x) as f64 / 32768.0
}

/// Mean frame energy over the frames that are active relative to the
/// loudest, as dBFS. `None` for an all-zero signal.
pub fn active_level_dbfs(x: &[f64]) -> Option<f64> {
    let e = frame_energies(x);
    let act = relative_active(&e);
    let (sum, n) = e.iter().zip(&act).filter(|(_, &a)| a).fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    (n > 0 && sum > 0.0).then(|| 10.0 * (sum / n as f64 / FRAME_LEN as f64).log10())
}

fn set_level(x: &mut [f64], dbfs: f64) {
    if let Some(l) = active_level_dbfs(x) {
        let g = 10f64.powf((dbfs - l) / 20.0);
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Sample ranges of the far-end and near-end talk spurts.
fn placement(spec: &ScenarioSpec, n: usize, guard: usize, rng: &mut ChaCha8Rng) -> (Option<(usize, usize)>, Option<(usize, usize)>) {
    let lead = ((LEAD_S * SAMPLE_RATE as f64) as usize).min(n / 8);
    let span = n - 2 * lead;
    match spec.mode {
        TalkMode::FarEndSingleTalk => (Some((lead, span)), None),
        TalkMode::NearEndSingleTalk => (None, Some((lead, span))),
        TalkMode::DoubleTalk => {
            let ov = spec.overlap_fraction;
            // overlap / union = ov for two spurts of equal length
            let (len, offset) = if ov > 0.0 {
                let len = (span as f64 * (1.0 + ov) / 2.0).round() as usize;
                (len, span - len)
            } else {
                let len = span.saturating_sub(guard) / 2;
                (len, len + guard)
            };
            let (a, b) = ((lead, len), (lead + offset, len));
            if rng.random_bool(0.5) {
                (Some(a), Some(b))
            } else {
                (Some(b), Some(a))
            }
        }
    }
}

fn placed(source: &SourceSpec, n: usize, (start, len): (usize, usize), level_dbfs: f64) -> Result<Vec<f64>> {
    let mut x = source.load(len)?;
    set_level(&mut x, level_dbfs);
    let mut out = vec![0.0; n];
    out[start..start + len].copy_from_slice(&x);
    Ok(out)
}

/// Gain moving `x` to the target ratio against `d`, or to `nominal - target`
/// dBFS when there are no mutually active frames. Zero for an absent stem.
fn stem_gain(
    d: &[f64],
    x: &[f64],
    target_db: f64,
    nominal_dbfs: f64,
    measure: fn(&[f64], &[f64]) -> Result<Option<f64>>,
) -> Result<(f64, bool)> {
    let Some(level) = active_level_dbfs(x) else { return Ok((0.0, false)) };
    if let Some(db) = measure(d, x)? {
        return Ok((10f64.powf((db - target_db) / 20.0), true));
    }
    Ok((10f64.powf((nominal_dbfs - target_db - level) / 20.0), false))
}

/// Renders one utterance. Deterministic given `spec`.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let n = (spec.duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = spec.rir.render()?;
    let (far_at, near_at) = placement(spec, n, h.len(), &mut rng);

    let mut r = match far_at {
        Some(at) => placed(&spec.far_end_source, n, at, spec.far_level_dbfs)?,
        None => vec![0.0; n],
    };
    let peak = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        r.iter_mut().for_each(|v| *v *= 0.99 / peak);
    }
    r.iter_mut().for_each(|v| *v = on_grid(*v));
    let d = match near_at {
        Some(at) => placed(&spec.near_end_source, n, at, spec.near_level_dbfs)?,
        None => vec![0.0; n],
    };

    let (f, change) = match &spec.echo_change {
        None => (render_echo(&r, &h, spec.nonlinearity)?, None),
        Some(c) => {
            let start = ((c.time_s * SAMPLE_RATE as f64).round() as usize).min(n);
            let after = c.new_rir.render()?;
            let f = render_echo_change(&r, &h, &after, spec.nonlinearity, start, CROSSFADE_SAMPLES)?;
            let log = EchoChangeLog { time_s: c.time_s, sample: start, frame: start / HOP, crossfade_samples: CROSSFADE_SAMPLES };
            (f, Some(log))
        }
    };
    let w: Vec<f64> = match spec.target_snr_db {
        Some(_) => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
        None => vec![0.0; n],
    };

    let (echo_gain, against_d) = stem_gain(&d, &f, spec.target_ser_db, spec.near_level_dbfs, measure_ser)?;
    let (noise_gain, _) = match spec.target_snr_db {
        Some(snr) => stem_gain(&d, &w, snr, spec.near_level_dbfs, measure_snr)?,
        None => (0.0, false),
    };
    let mut peak = 0.0f64;
    for i in 0..n {
        peak = peak.max((d[i] + echo_gain * f[i] + noise_gain * w[i]).abs());
    }
    let headroom_gain = if peak > MAX_PEAK { MAX_PEAK / peak } else { 1.0 };

    let d: Vec<f64> = d.iter().map(|v| on_grid(v * headroom_gain)).collect();
    let f: Vec<f64> = f.iter().map(|v| on_grid(v * echo_gain * headroom_gain)).collect();
    let w: Vec<f64> = w.iter().map(|v| on_grid(v * noise_gain * headroom_gain)).collect();
    let m: Vec<f64> = (0..n).map(|i| d[i] + f[i] + w[i]).collect();

    let mut labels = ActivityLabels::from_stems(&d, &f, ACTIVE_DBFS)?;
    labels.echo_changes = change.iter().map(|c| c.frame).collect();
    let mix = MixReport {
        echo_gain: echo_gain * headroom_gain,
        noise_gain: noise_gain * headroom_gain,
        headroom_gain,
        ser_measured_against_near_end: against_d,
        measured_ser_db: measure_ser(&d, &f)?,
        measured_snr_db: measure_snr(&d, &w)?,
    };
    Ok(Scenario {
        spec: spec.clone(),
        m: TimeSignal::new(m, Role::Microphone)?,
        r: TimeSignal::new(r, Role::FarEnd)?,
        d: TimeSignal::new(d, Role::NearEnd)?,
        f: TimeSignal::new(f, Role::Echo)?,
        w: TimeSignal::new(w, Role::Noise)?,
        labels,
        echo_change: change,
        mix,
    })
}

/// Residual echo after linear cancellation, `z = f - a`.
pub fn residual_echo(f: &TimeSignal, a: &TimeSignal) -> Result<TimeSignal> {
    if f.len() != a.len() {
        return Err(Error::Shape(format!("echo has {} samples, estimate {}", f.len(), a.len())));
    }
    TimeSignal::new(f.samples().iter().zip(a.samples()).map(|(x, y)| x - y).collect(), Role::Echo)
}

/// Ranges from which [`random_spec`] draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimDefaults {
    pub duration_s: f64,
    pub ser_range_db: [f64; 2],
    pub snr_range_db: [f64; 2],
    /// When false no noise stem is added.
    pub add_noise: bool,
    pub rt60_range_s: [f64; 2],
    pub nonlinearity: Nonlinearity,
    pub overlap_fraction: f64,
    pub echo_change_probability: f64,
    pub near_level_dbfs: f64,
    pub far_level_dbfs: f64,
    /// Optional WAV pools; synthetic speech is used when empty.
    pub near_end_wavs: Vec<PathBuf>,
    pub far_end_wavs: Vec<PathBuf>,
}

impl Default for SimDefaults {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            ser_range_db: [-10.0, 0.0],
            snr_range_db: [30.0, 40.0],
            add_noise: true,
            rt60_range_s: [0.3, 0.6],
            nonlinearity: Nonlinearity::default(),
            overlap_fraction: 0.9,
            echo_change_probability: 0.25,
            near_level_dbfs: -26.0,
            far_level_dbfs: -18.0,
            near_end_wavs: Vec::new(),
            far_end_wavs: Vec::new(),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// A spec of the given mode with parameters drawn from `defaults`. Derived
/// seeds are 63-bit so manifests stay within TOML integers.
pub fn random_spec(defaults: &SimDefaults, mode: TalkMode, seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = |pool: &[PathBuf], rng: &mut ChaCha8Rng| match pool.len() {
        0 => SourceSpec::Synthetic { seed: rng.next_u64() >> 1 },
        k => SourceSpec::Wav { path: pool[rng.random_range(0..k)].clone() },
    };
    let near_end_source = source(&defaults.near_end_wavs, &mut rng);
    let far_end_source = source(&defaults.far_end_wavs, &mut rng);
    let rir = RirSpec::new(uniform(&mut rng, defaults.rt60_range_s), rng.next_u64() >> 1);
    let target_ser_db = uniform(&mut rng, defaults.ser_range_db);
    let snr = uniform(&mut rng, defaults.snr_range_db);
    let target_snr_db = defaults.add_noise.then_some(snr);
    let echo_change = (mode.has_far() && rng.random_bool(defaults.echo_change_probability.clamp(0.0, 1.0))).then(|| {
        EchoChange {
            time_s: defaults.duration_s * rng.random_range(0.3..0.7),
            new_rir: RirSpec::new(uniform(&mut rng, defaults.rt60_range_s), rng.next_u64() >> 1),
        }
    });
    ScenarioSpec {
        mode,
        duration_s: defaults.duration_s,
        near_end_source,
        far_end_source,
        rir,
        nonlinearity: defaults.nonlinearity,
        target_ser_db,
        target_snr_db,
        overlap_fraction: defaults.overlap_fraction,
        near_level_dbfs: defaults.near_level_dbfs,
        far_level_dbfs: defaults.far_level_dbfs,
        echo_change,
        seed: rng.next_u64() >> 1,
    }
}

/// Per-utterance manifest written next to the stems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub name: String,
    pub code_version: String,
    pub samples: usize,
    pub frames: usize,
    pub spec: ScenarioSpec,
    pub mix: MixReport,
    pub echo_change: Option<EchoChangeLog>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const LABELS_FILE: &str = "labels.txt";
const STEMS: [Role; 5] = [Role::Microphone, Role::FarEnd, Role::NearEnd, Role::Echo, Role::Noise];

impl Scenario {
    pub fn stem(&self, role: Role) -> Option<&TimeSignal> {
        match role {
            Role::Microphone => Some(&self.m),
            Role::FarEnd => Some(&self.r),
            Role::NearEnd => Some(&self.d),
            Role::Echo => Some(&self.f),
            Role::Noise => Some(&self.w),
            _ => None,
        }
    }

    pub fn manifest(&self, name: &str) -> ScenarioManifest {
        ScenarioManifest {
            name: name.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            samples: self.m.len(),
            frames: self.labels.len(),
            spec: self.spec.clone(),
            mix: self.mix.clone(),
            echo_change: self.echo_change.clone(),
        }
    }

    /// Writes `m.wav r.wav d.wav f.wav w.wav`, the labels and the manifest
    /// into `dir`, creating it.
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        for role in STEMS {
            write_wav(&dir.join(format!("{}.wav", role.stem())), self.stem(role).expect("stem role"))?;
        }
        fs::write(dir.join(LABELS_FILE), self.labels.to_text())?;
        let text = toml::to_string(&self.manifest(name)).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

/// An utterance read back from disk.
#[derive(Debug, Clone)]
pub struct StoredScenario {
    pub dir: PathBuf,
    pub manifest: ScenarioManifest,
    pub labels: ActivityLabels,
}

impl StoredScenario {
    pub fn open(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
        let labels = ActivityLabels::from_text(&fs::read_to_string(dir.join(LABELS_FILE))?)?;
        Ok(Self { dir: dir.to_path_buf(), manifest, labels })
    }

    pub fn stem(&self, role: Role) -> Result<TimeSignal> {
        read_wav(&self.dir.join(format!("{}.wav", role.stem())), role)
    }
}
