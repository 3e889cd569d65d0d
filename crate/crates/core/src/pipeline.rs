//! End-to-end operations shared by the command-line tool and the tests:
//! corpus simulation, training on a corpus, enhancement of one recording,
//! corpus evaluation and the compute budget.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aec::{aec_flops_estimate, aec_run, AecConfig};
use crate::error::{Error, Result};
use crate::metrics::{Aggregation, MetricsReport, UtteranceMetrics};
use crate::model_file::ModelFile;
use crate::signal::{GainFit, NormStats, Role, TimeSignal, N_BINS};
use crate::sim::{generate, random_spec, SimDefaults, StoredScenario, TalkMode};
use crate::training::{
    fit_input_norm, infer_stream, train_from, BlockSet, InferConfig, LossConfig, TrainConfig, TrainObserver,
    TrainOutcome, TrainState, UtteranceSpectra,
};
use crate::unet::{count_flops, count_params, UNetConfig, UNetWeights};

pub const CORPUS_FILE: &str = "corpus.toml";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub model: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { data_dir: "data".into(), model: "model.resunet".into(), report_dir: "reports".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AecSettings {
    #[serde(flatten)]
    pub filter: AecConfig,
    /// Adaptation passes over each utterance before the reported pass.
    pub prime_passes: usize,
}

impl Default for AecSettings {
    fn default() -> Self {
        Self { filter: AecConfig::default(), prime_passes: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSettings {
    pub aggregation: Aggregation,
    /// External PESQ command; `{reference}` and `{degraded}` are replaced by
    /// WAV paths and the last number printed is taken as the score.
    pub pesq_command: Option<String>,
}

/// Everything a run depends on. Embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub aec: AecSettings,
    pub unet: UNetConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub simulator: SimDefaults,
    pub metrics: MetricsSettings,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }

    fn as_table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Corpus-level manifest written by [`simulate_corpus`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub code_version: String,
    pub seed: u64,
    pub utterances: Vec<CorpusEntry>,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub mode: TalkMode,
    pub seed: u64,
}

/// Talk mode of utterance `i`: far, near and double talk in turn, so every
/// multiple of three gives equal thirds.
pub fn corpus_mode(i: usize) -> TalkMode {
    TalkMode::ALL[i % 3]
}

pub fn utterance_name(i: usize) -> String {
    format!("utt_{i:05}")
}

/// Seed of utterance `i`, independent of the corpus size.
pub fn utterance_seed(seed: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng.next_u64() >> 1
}

fn is_nonempty_dir(dir: &Path) -> Result<bool> {
    Ok(dir.is_dir() && fs::read_dir(dir)?.next().is_some())
}

/// Generates `n` utterances into `out/utt_NNNNN/`. A non-empty `out` is an
/// error unless `force` is set, in which case earlier utterance directories
/// and the corpus manifest are replaced.
pub fn simulate_corpus(cfg: &PipelineConfig, n: usize, seed: u64, out: &Path, force: bool) -> Result<CorpusManifest> {
    if is_nonempty_dir(out)? {
        if !force {
            return Err(Error::InvalidArgument(format!("{} is not empty; pass --force to overwrite", out.display())));
        }
        for entry in fs::read_dir(out)? {
            let p = entry?.path();
            let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
            if p.is_dir() && name.starts_with("utt_") {
                fs::remove_dir_all(&p)?;
            } else if name == CORPUS_FILE {
                fs::remove_file(&p)?;
            }
        }
    }
    fs::create_dir_all(out)?;
    let mut utterances = Vec::with_capacity(n);
    for i in 0..n {
        let (name, mode, useed) = (utterance_name(i), corpus_mode(i), utterance_seed(seed, i));
        let scenario = generate(&random_spec(&cfg.simulator, mode, useed))?;
        scenario.write(&out.join(&name), &name)?;
        log::info!("{name}: {} ({:.1} s)", mode.as_str(), scenario.m.duration_s());
        utterances.push(CorpusEntry { name, mode, seed: useed });
    }
    let manifest = CorpusManifest { code_version: CODE_VERSION.into(), seed, utterances, config: cfg.clone() };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(out.join(CORPUS_FILE), text)?;
    Ok(manifest)
}

/// Utterance directories of a corpus, in name order.
pub fn open_corpus(dir: &Path) -> Result<Vec<StoredScenario>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(crate::sim::MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Empty(format!("no utterances under {}", dir.display())));
    }
    dirs.iter().map(|d| StoredScenario::open(d)).collect()
}

/// AEC error and estimate for one recording.
pub fn run_aec(cfg: &AecSettings, mic: &TimeSignal, far_end: &TimeSignal) -> Result<(TimeSignal, TimeSignal)> {
    let out = aec_run(mic, far_end, &cfg.filter, cfg.prime_passes)?;
    Ok((out.error, out.estimate))
}

/// Normalized training blocks of a set of utterances and the statistics
/// they were normalized with.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub blocks: BlockSet,
    pub stats: NormStats,
    pub utterances: usize,
}

pub fn prepare_training(cfg: &PipelineConfig, scenarios: &[StoredScenario]) -> Result<TrainingSet> {
    let mut spectra = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let (m, r, d) = (s.stem(Role::Microphone)?, s.stem(Role::FarEnd)?, s.stem(Role::NearEnd)?);
        let (e, a) = run_aec(&cfg.aec, &m, &r)?;
        spectra.push(UtteranceSpectra::new(&e, &a, Some(&d))?);
    }
    let stats = fit_input_norm(&spectra)?;
    let mut blocks = BlockSet::new();
    for u in &spectra {
        blocks.push_utterance(u, &stats)?;
    }
    Ok(TrainingSet { blocks, stats, utterances: spectra.len() })
}

/// Trains from `resume` (or a fresh seeded initialization) to
/// `cfg.train.epochs` epochs.
pub fn train_model(
    cfg: &PipelineConfig,
    set: &TrainingSet,
    resume: Option<TrainState>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let state = match resume {
        Some(s) => s,
        None => TrainState::new(UNetWeights::init(&cfg.unet, cfg.seed)?, train_cfg.adam),
    };
    train_from(&set.blocks, state, &cfg.loss, &train_cfg, observer)
}

/// Wraps trained weights with their statistics and provenance.
pub fn model_file(cfg: &PipelineConfig, weights: UNetWeights<f32>, stats: NormStats, best_epoch: Option<usize>) -> Result<ModelFile> {
    let mut meta = toml::Table::new();
    meta.insert("code_version".into(), CODE_VERSION.into());
    meta.insert("seed".into(), toml::Value::Integer(cfg.seed as i64));
    meta.insert("alpha".into(), cfg.loss.alpha.into());
    if let Some(e) = best_epoch {
        meta.insert("best_epoch".into(), toml::Value::Integer(e as i64));
    }
    meta.insert("config".into(), toml::Value::Table(cfg.as_table()?));
    Ok(ModelFile { weights, stats, meta })
}

/// Config embedded in a model file, if any.
pub fn embedded_config(model: &ModelFile) -> Option<PipelineConfig> {
    model.meta.get("config")?.clone().try_into().ok()
}

/// Signals of one enhanced recording.
#[derive(Debug, Clone)]
pub struct Enhanced {
    pub error: TimeSignal,
    pub estimate: TimeSignal,
    pub prediction: TimeSignal,
    pub gain: Option<GainFit>,
}

/// AEC, then the UNet on the AEC outputs.
pub fn enhance(cfg: &PipelineConfig, model: &ModelFile, mic: &TimeSignal, far_end: &TimeSignal) -> Result<Enhanced> {
    let (error, estimate) = run_aec(&cfg.aec, mic, far_end)?;
    let out = infer_stream(&error, &estimate, &model.weights, &model.stats, &cfg.infer)?;
    Ok(Enhanced { error, estimate, prediction: out.prediction, gain: out.gain })
}

/// Metrics of the suppressor output (ERLE relative to the AEC error) and of
/// the AEC alone (ERLE relative to the microphone), per corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub suppressor: MetricsReport,
    pub aec: MetricsReport,
}

/// Evaluates predictions produced by `predict` for each scenario.
pub fn evaluate(
    cfg: &PipelineConfig,
    scenarios: &[StoredScenario],
    mut predict: impl FnMut(&StoredScenario, &TimeSignal, &TimeSignal) -> Result<TimeSignal>,
) -> Result<Evaluation> {
    let how = cfg.metrics.aggregation;
    let (mut res, mut aec) = (Vec::new(), Vec::new());
    for s in scenarios {
        let (m, r, d) = (s.stem(Role::Microphone)?, s.stem(Role::FarEnd)?, s.stem(Role::NearEnd)?);
        let (e, _) = run_aec(&cfg.aec, &m, &r)?;
        let p = predict(s, &m, &r)?;
        if p.len() != m.len() {
            return Err(Error::Shape(format!("{}: prediction has {} samples, mixture {}", s.manifest.name, p.len(), m.len())));
        }
        let name = &s.manifest.name;
        res.push(UtteranceMetrics::compute(name, e.samples(), d.samples(), p.samples(), &s.labels, how)?);
        aec.push(UtteranceMetrics::compute(name, m.samples(), d.samples(), e.samples(), &s.labels, how)?);
    }
    Ok(Evaluation { suppressor: MetricsReport::new(res, how), aec: MetricsReport::new(aec, how) })
}

/// Reference figures the budget is compared against.
pub const REFERENCE_PARAMS: f64 = 136_000.0;
pub const PARAM_TOLERANCE: f64 = 0.15;
pub const REFERENCE_FLOPS: f64 = 1.6e9;
pub const FLOPS_FACTOR: f64 = 4.0;
pub const MAX_MODEL_BYTES: usize = 10 * 1024 * 1024;
/// UNet passes per second of audio: one window per 10 ms hop.
pub const PASSES_PER_SECOND: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub trainable_params: usize,
    pub running_stats: usize,
    pub unet_flops_per_s: f64,
    pub aec_flops_per_s: f64,
    pub total_flops_per_s: f64,
    pub model_bytes: usize,
    /// Human-readable deviations from the reference figures; empty when
    /// everything is in range.
    pub flags: Vec<String>,
}

pub fn budget(cfg: &PipelineConfig) -> Result<BudgetReport> {
    let counts = count_params(&cfg.unet);
    let weights = UNetWeights::<f32>::init(&cfg.unet, cfg.seed)?;
    let stats = NormStats { bin_min: vec![0.0; N_BINS], bin_range: vec![1.0; N_BINS] };
    let model_bytes = model_file(cfg, weights, stats, None)?.to_bytes()?.len();
    let unet = count_flops(&cfg.unet, PASSES_PER_SECOND);
    let aec = aec_flops_estimate(&cfg.aec.filter);
    let total = unet + aec;
    let mut flags = Vec::new();
    let (lo, hi) = (REFERENCE_PARAMS * (1.0 - PARAM_TOLERANCE), REFERENCE_PARAMS * (1.0 + PARAM_TOLERANCE));
    let p = counts.trainable as f64;
    if p > hi {
        flags.push(format!("param overage: {} trainable parameters, above {hi:.0}", counts.trainable));
    } else if p < lo {
        flags.push(format!("param shortfall: {} trainable parameters, below {lo:.0}", counts.trainable));
    }
    if total > REFERENCE_FLOPS * FLOPS_FACTOR {
        flags.push(format!("flops overage: {:.3} Gflops/s, above {:.1}", total / 1e9, REFERENCE_FLOPS * FLOPS_FACTOR / 1e9));
    } else if total < REFERENCE_FLOPS / FLOPS_FACTOR {
        flags.push(format!("flops shortfall: {:.3} Gflops/s, below {:.1}", total / 1e9, REFERENCE_FLOPS / FLOPS_FACTOR / 1e9));
    }
    if model_bytes > MAX_MODEL_BYTES {
        flags.push(format!("model size overage: {model_bytes} bytes, above {MAX_MODEL_BYTES}"));
    }
    Ok(BudgetReport {
        trainable_params: counts.trainable,
        running_stats: counts.running,
        unet_flops_per_s: unet,
        aec_flops_per_s: aec,
        total_flops_per_s: total,
        model_bytes,
        flags,
    })
}
