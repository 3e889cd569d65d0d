use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::data::BlockSet;
use super::loss::{loss_grad, loss_j, LossConfig};
use crate::error::{Error, Result};
use crate::unet::{backward, forward, update_running_stats, Mode, UNetWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.0005, minibatch_size: 4, epochs: 20, seed: 0, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.learning_rate)));
        }
        if self.minibatch_size == 0 {
            return Err(Error::InvalidArgument("minibatch size must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub alpha: f64,
}

/// Everything needed to continue a run after an epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub weights: UNetWeights<f32>,
    pub adam: AdamState,
    /// Epochs already completed.
    pub epoch: usize,
    pub best: Option<(usize, f64, UNetWeights<f32>)>,
}

impl TrainState {
    pub fn new(weights: UNetWeights<f32>, adam: AdamConfig) -> Self {
        let n = weights.params.len();
        Self { weights, adam: AdamState::new(adam, n), epoch: 0, best: None }
    }
}

/// Hooks called while training runs.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &LogRecord) -> Result<()> {
        Ok(())
    }

    /// Called after each epoch with the mean epoch loss.
    fn on_epoch(&mut self, _state: &TrainState, _mean_loss: f64) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights at the epoch with the lowest mean training loss.
    pub best_weights: UNetWeights<f32>,
    pub best_epoch: usize,
    pub epoch_losses: Vec<f64>,
    pub log: Vec<LogRecord>,
    pub final_state: TrainState,
}

/// Shuffle order for `epoch`, independent of earlier epochs so a resumed run
/// sees the same batches.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

pub fn train(
    data: &BlockSet,
    weights: UNetWeights<f32>,
    loss: &LossConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    train_from(data, TrainState::new(weights, cfg.adam), loss, cfg, observer)
}

/// Continues training from `state` until `cfg.epochs` epochs are complete.
pub fn train_from(
    data: &BlockSet,
    mut state: TrainState,
    loss: &LossConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set has no blocks".into()));
    }
    let mut log = Vec::new();
    let mut epoch_losses = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.minibatch_size).enumerate() {
            let (x, d) = data.batch(idx);
            let numerical = |e: Error| if e.is_numerical() { Error::NanLoss { epoch, batch: b } } else { e };
            let (y, cache) = forward(&state.weights, &x, Mode::Train).map_err(numerical)?;
            let j = loss_j(&y, &d, loss).map_err(numerical)?;
            if !j.is_finite() {
                return Err(Error::NanLoss { epoch, batch: b });
            }
            let g = backward(&state.weights, &cache, &loss_grad(&y, &d, loss)?)?;
            if g.params.iter().any(|v| !v.is_finite()) {
                return Err(Error::NanLoss { epoch, batch: b });
            }
            state.adam.update(&mut state.weights.params, &g.params, cfg.learning_rate);
            update_running_stats(&mut state.weights, &cache);
            let rec = LogRecord { epoch, step: state.adam.step, loss: j, alpha: loss.alpha };
            observer.on_step(&rec)?;
            log.push(rec);
            total += j;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
        state.epoch += 1;
        if state.best.as_ref().is_none_or(|(_, l, _)| mean < *l) {
            state.best = Some((epoch, mean, state.weights.clone()));
        }
        observer.on_epoch(&state, mean)?;
    }
    let (best_epoch, _, best_weights) = state.best.clone().ok_or_else(|| Error::Empty("no epochs were run".into()))?;
    Ok(TrainOutcome { best_weights, best_epoch, epoch_losses, log, final_state: state })
}
