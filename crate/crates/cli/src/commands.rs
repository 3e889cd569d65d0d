use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{anyhow, bail, Context, Result};
use res_core::model_file::{Checkpoint, ModelFile};
use res_core::pipeline::{self, PipelineConfig, TrainingSet};
use res_core::signal::wav::{read_wav, write_wav};
use res_core::signal::{Role, TimeSignal};
use res_core::sim::StoredScenario;
use res_core::training::{LogRecord, TrainObserver, TrainState};

use crate::{BudgetArgs, EvaluateArgs, Globals, InferArgs, SimulateArgs, TrainArgs};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Numerical failures exit with 3, unreadable or malformed inputs with 2,
/// everything else (bad flags, bad config) with 1.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<res_core::Error>() {
            return if e.is_numerical() {
                EXIT_NUMERICAL
            } else if e.is_data() || matches!(e, res_core::Error::Shape(_)) {
                EXIT_DATA
            } else {
                EXIT_USAGE
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_USAGE
}

fn resolve(g: &Globals, fallback: Option<PipelineConfig>) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => fallback.unwrap_or_default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(a) = g.alpha {
        cfg.loss.alpha = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn print_config(g: &Globals) -> Result<()> {
    print!("{}", resolve(g, None)?.to_toml()?);
    Ok(())
}

pub fn simulate(g: &Globals, a: SimulateArgs) -> Result<()> {
    let cfg = resolve(g, None)?;
    let out = a.out.unwrap_or_else(|| cfg.paths.data_dir.clone());
    let manifest = pipeline::simulate_corpus(&cfg, a.n, cfg.seed, &out, a.force)?;
    println!("wrote {} utterances to {}", manifest.utterances.len(), out.display());
    Ok(())
}

/// Streams the loss log and saves a checkpoint after every epoch.
struct RunRecorder<'a> {
    cfg: &'a PipelineConfig,
    set: &'a TrainingSet,
    log: BufWriter<File>,
    checkpoint: PathBuf,
}

impl TrainObserver for RunRecorder<'_> {
    fn on_step(&mut self, record: &LogRecord) -> res_core::Result<()> {
        let line = serde_json::to_string(record).map_err(|e| res_core::Error::Config(e.to_string()))?;
        writeln!(self.log, "{line}")?;
        Ok(())
    }

    fn on_epoch(&mut self, state: &TrainState, _mean_loss: f64) -> res_core::Result<()> {
        self.log.flush()?;
        let model = pipeline::model_file(self.cfg, state.weights.clone(), self.set.stats.clone(), None)?;
        Checkpoint { model, state: state.clone() }.save(&self.checkpoint)
    }
}

pub fn train(g: &Globals, a: TrainArgs) -> Result<()> {
    let mut cfg = resolve(g, None)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let data = a.data.unwrap_or_else(|| cfg.paths.data_dir.clone());
    let model_path = a.model.unwrap_or_else(|| cfg.paths.model.clone());
    cfg.paths.data_dir = data.clone();
    cfg.paths.model = model_path.clone();
    let log_path = a.log.unwrap_or_else(|| with_suffix(&model_path, ".log.jsonl"));
    let ckpt_path = a.checkpoint.unwrap_or_else(|| with_suffix(&model_path, ".ckpt"));

    let scenarios = pipeline::open_corpus(&data).with_context(|| format!("opening corpus {}", data.display()))?;
    let set = pipeline::prepare_training(&cfg, &scenarios)?;
    log::info!("{} utterances, {} training blocks", set.utterances, set.blocks.len());

    let resume = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            if ck.model.stats != set.stats {
                bail!("checkpoint {} was trained on different data", p.display());
            }
            Some(ck.state)
        }
        None => None,
    };
    let log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening log {}", log_path.display()))?;
    let mut recorder = RunRecorder { cfg: &cfg, set: &set, log: BufWriter::new(log_file), checkpoint: ckpt_path };
    let outcome = pipeline::train_model(&cfg, &set, resume, &mut recorder)?;
    recorder.log.flush()?;

    let model = pipeline::model_file(&cfg, outcome.best_weights, set.stats.clone(), Some(outcome.best_epoch))?;
    model.save(&model_path).with_context(|| format!("writing model {}", model_path.display()))?;
    println!(
        "best epoch {} (mean loss {:.6}); model written to {}",
        outcome.best_epoch,
        outcome.epoch_losses.get(outcome.best_epoch).copied().unwrap_or(f64::NAN),
        model_path.display()
    );
    Ok(())
}

fn infer_config(g: &Globals, model: &ModelFile, freeze: bool) -> Result<PipelineConfig> {
    let mut cfg = resolve(g, pipeline::embedded_config(model))?;
    if freeze {
        cfg.aec.filter.step_size = 0.0;
    }
    if let (Some(want), Some(have)) = (g.alpha, model.meta.get("alpha").and_then(|v| v.as_float())) {
        if want != have {
            log::warn!("model was trained with alpha {have}, requested {want}; alpha only takes effect at training");
        }
    }
    Ok(cfg)
}

fn read_stem(path: &Path, role: Role) -> Result<TimeSignal> {
    read_wav(path, role).with_context(|| format!("reading {}", path.display()))
}

pub fn infer(g: &Globals, a: InferArgs) -> Result<()> {
    let base = resolve(g, None)?;
    let model_path = a.model.clone().unwrap_or_else(|| base.paths.model.clone());
    let model = load_model(&model_path)?;
    let cfg = infer_config(g, &model, a.freeze_aec)?;
    if let Some(data) = &a.data {
        let out_dir = a.out_dir.as_ref().ok_or_else(|| anyhow!("--data needs --out-dir"))?;
        fs::create_dir_all(out_dir)?;
        for s in pipeline::open_corpus(data)? {
            let (m, r) = (s.stem(Role::Microphone)?, s.stem(Role::FarEnd)?);
            let out = pipeline::enhance(&cfg, &model, &m, &r).with_context(|| s.manifest.name.clone())?;
            write_wav(&out_dir.join(format!("{}.wav", s.manifest.name)), &out.prediction)?;
        }
        println!("enhanced corpus {} into {}", data.display(), out_dir.display());
        return Ok(());
    }
    let (Some(mic), Some(far), Some(out_path)) = (&a.mic, &a.far, &a.out) else {
        bail!("give --mic, --far and --out, or --data and --out-dir");
    };
    let m = read_stem(mic, Role::Microphone)?;
    let r = read_stem(far, Role::FarEnd)?;
    if m.len() != r.len() {
        return Err(res_core::Error::Shape(format!("mic has {} samples, far end {}", m.len(), r.len())).into());
    }
    let out = pipeline::enhance(&cfg, &model, &m, &r)?;
    write_wav(out_path, &out.prediction).with_context(|| format!("writing {}", out_path.display()))?;
    match out.gain {
        Some(fit) => println!("wrote {} (gain {:.4})", out_path.display(), fit.gain),
        None => println!("wrote {}", out_path.display()),
    }
    Ok(())
}

/// Runs the configured PESQ command on one pair and returns the last number
/// it prints.
fn run_pesq(template: &str, reference: &Path, degraded: &Path) -> Result<f64> {
    let cmd = template
        .replace("{reference}", &reference.display().to_string())
        .replace("{degraded}", &degraded.display().to_string());
    let out = Command::new("sh").arg("-c").arg(&cmd).output().with_context(|| format!("running '{cmd}'"))?;
    if !out.status.success() {
        bail!("'{cmd}' exited with {}", out.status);
    }
    String::from_utf8_lossy(&out.stdout)
        .split(|c: char| c.is_whitespace() || c == '=' || c == ':')
        .filter_map(|t| t.parse::<f64>().ok())
        .last()
        .ok_or_else(|| anyhow!("no score in the output of '{cmd}'"))
}

pub fn evaluate(g: &Globals, a: EvaluateArgs) -> Result<()> {
    let model = a.model.as_deref().map(load_model).transpose()?;
    let cfg = match &model {
        Some(m) => infer_config(g, m, false)?,
        None => resolve(g, None)?,
    };
    let data = a.data.clone().unwrap_or_else(|| cfg.paths.data_dir.clone());
    let report_dir = a.report_dir.clone().unwrap_or_else(|| cfg.paths.report_dir.clone());
    if a.predictions.is_none() && model.is_none() && !a.aec_only {
        bail!("give --predictions, --model or --aec-only");
    }
    let scenarios = pipeline::open_corpus(&data).with_context(|| format!("opening corpus {}", data.display()))?;
    fs::create_dir_all(&report_dir)?;
    let pesq_dir = report_dir.join("pesq");
    let mut pesq = Vec::new();
    let eval = pipeline::evaluate(&cfg, &scenarios, |s: &StoredScenario, m, r| {
        let p = if let Some(dir) = &a.predictions {
            read_wav(&dir.join(format!("{}.wav", s.manifest.name)), Role::Prediction)?
        } else if let Some(model) = &model {
            pipeline::enhance(&cfg, model, m, r)?.prediction
        } else {
            pipeline::run_aec(&cfg.aec, m, r)?.0
        };
        if let Some(template) = &cfg.metrics.pesq_command {
            fs::create_dir_all(&pesq_dir)?;
            let deg = pesq_dir.join(format!("{}.wav", s.manifest.name));
            write_wav(&deg, &p)?;
            let reference = s.dir.join("d.wav");
            match run_pesq(template, &reference, &deg) {
                Ok(v) => pesq.push((s.manifest.name.clone(), v)),
                Err(e) => log::warn!("PESQ for {}: {e:#}", s.manifest.name),
            }
        }
        Ok(p)
    })?;

    let mut kv = String::new();
    let _ = writeln!(kv, "code_version = {}", pipeline::CODE_VERSION);
    let _ = writeln!(kv, "seed = {}", cfg.seed);
    for line in eval.suppressor.to_key_value().lines() {
        let _ = writeln!(kv, "suppressor.{line}");
    }
    for line in eval.aec.to_key_value().lines() {
        let _ = writeln!(kv, "aec.{line}");
    }
    for (name, v) in &pesq {
        let _ = writeln!(kv, "suppressor.{name}.pesq = {v}");
    }
    fs::write(report_dir.join("metrics.txt"), &kv)?;
    let table = format!(
        "Suppressor output (ERLE against the AEC error)\n{}\nLinear AEC alone (ERLE against the microphone)\n{}",
        eval.suppressor.to_table(),
        eval.aec.to_table()
    );
    fs::write(report_dir.join("table.txt"), &table)?;
    let json = serde_json::json!({ "evaluation": eval, "config": cfg, "code_version": pipeline::CODE_VERSION });
    fs::write(report_dir.join("report.json"), serde_json::to_string_pretty(&json)?)?;
    print!("{table}");
    Ok(())
}

pub fn budget(g: &Globals, a: BudgetArgs) -> Result<()> {
    let (cfg, model) = match &a.model {
        Some(p) => {
            let model = load_model(p)?;
            (resolve(g, pipeline::embedded_config(&model))?, Some((p, model)))
        }
        None => (resolve(g, None)?, None),
    };
    let b = pipeline::budget(&cfg)?;
    println!("trainable_params = {}", b.trainable_params);
    println!("running_stats = {}", b.running_stats);
    println!("unet_gflops_per_s = {:.4}", b.unet_flops_per_s / 1e9);
    println!("aec_gflops_per_s = {:.4}", b.aec_flops_per_s / 1e9);
    println!("total_gflops_per_s = {:.4}", b.total_flops_per_s / 1e9);
    println!("model_bytes = {}", b.model_bytes);
    let mut flags = b.flags.clone();
    if let Some((p, model)) = model {
        let len = fs::metadata(p)?.len();
        println!("model_file_bytes = {len}");
        if model.weights.params.len() != b.trainable_params {
            flags.push(format!(
                "model has {} parameters but its config implies {}",
                model.weights.params.len(),
                b.trainable_params
            ));
        }
        if len as usize > pipeline::MAX_MODEL_BYTES {
            flags.push(format!("model file is {len} bytes, above {}", pipeline::MAX_MODEL_BYTES));
        }
    }
    println!("flags = {}", if flags.is_empty() { "none".to_string() } else { flags.join("; ") });
    Ok(())
}
