//! Partitioned-block frequency-domain NLMS echo canceler.
//!
//! Overlap-save with block length `B` and FFT size `2B`; the filter is split
//! into `ceil(L / B)` partitions and the last partition is gradient-constrained
//! so exactly `L` time-domain taps are ever non-zero.
//!
//! Two-path structure: a background filter adapts on every block with far-end
//! activity, and the foreground filter that produces the output takes over its
//! taps only when the background error is clearly smaller. A background
//! pulled away by double talk is reset to the foreground.

use std::collections::VecDeque;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Role, TimeSignal, SAMPLE_RATE};

/// Estimates are rounded to this grid so `e + a == m` is exact for PCM-grid mixtures.
const ESTIMATE_GRID: f64 = (1u64 << 30) as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AecConfig {
    /// Filter length in samples (150 ms at 16 kHz).
    pub filter_len: usize,
    pub block_len: usize,
    /// NLMS step size of the background filter in `[0, 2)`; zero freezes both filters.
    pub step_size: f64,
    /// Regularization of the per-bin step normalization, relative to the
    /// mean regressor power over bins.
    pub regularization: f64,
    /// The background filter replaces the foreground once its smoothed error
    /// is this much below the foreground's.
    pub copy_margin_db: f64,
    /// The background filter is reset to the foreground once its smoothed
    /// error is this much above the foreground's.
    pub reset_margin_db: f64,
    /// Consecutive blocks a copy or reset condition must hold.
    pub decision_blocks: usize,
    /// Far-end blocks quieter than this are not used for adaptation.
    pub far_end_floor_dbfs: f64,
    /// Block ERLE at which the output filter is reported as converged.
    pub converged_erle_db: f64,
}

impl Default for AecConfig {
    fn default() -> Self {
        Self {
            filter_len: 2400,
            block_len: 320,
            step_size: 0.5,
            regularization: 1e-6,
            copy_margin_db: 3.0,
            reset_margin_db: 6.0,
            decision_blocks: 2,
            far_end_floor_dbfs: -60.0,
            converged_erle_db: 10.0,
        }
    }
}

impl AecConfig {
    pub fn partitions(&self) -> usize {
        self.filter_len.div_ceil(self.block_len)
    }

    fn validate(&self) -> Result<()> {
        if self.block_len == 0 {
            return Err(Error::InvalidArgument("AEC block length must be positive".into()));
        }
        if !(0.0..2.0).contains(&self.step_size) {
            return Err(Error::InvalidArgument(format!(
                "AEC step size {} outside [0, 2)",
                self.step_size
            )));
        }
        if !(self.regularization > 0.0) {
            return Err(Error::InvalidArgument("AEC regularization must be positive".into()));
        }
        Ok(())
    }
}

fn fft_flops(n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        5.0 * n as f64 * (n as f64).log2()
    }
}

/// Flops for one block: always-on filtering (far-end FFT, then foreground
/// and background filters) plus background adaptation.
fn block_flops(cfg: &AecConfig) -> (f64, f64) {
    let p = cfg.partitions() as f64;
    let n = 2 * cfg.block_len;
    let (nf, f) = (n as f64, fft_flops(n));
    let filtering = f + 2.0 * (f + 8.0 * p * nf + cfg.block_len as f64);
    let adaptation = f + 3.0 * p * nf + 2.0 * nf + p * (12.0 * nf + 2.0 * f);
    (filtering, adaptation)
}

/// Closed-form flops per second of audio, assuming every block adapts.
pub fn aec_flops_estimate(cfg: &AecConfig) -> f64 {
    if cfg.filter_len == 0 || cfg.block_len == 0 {
        return 0.0;
    }
    let (filtering, adaptation) = block_flops(cfg);
    (filtering + adaptation) * SAMPLE_RATE as f64 / cfg.block_len as f64
}

/// Adaptive filter state for one stream.
pub struct AecState {
    config: AecConfig,
    /// Output (foreground) filter, only ever replaced by the background.
    foreground: Vec<Vec<Complex64>>,
    /// Continuously adapting (background) filter.
    background: Vec<Vec<Complex64>>,
    history: VecDeque<Vec<Complex64>>,
    prev_far: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    converged: bool,
    smoothed_fg: f64,
    smoothed_bg: f64,
    better_run: usize,
    worse_run: usize,
    pub stats: AecStats,
}

/// Diagnostics accumulated while processing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AecStats {
    pub blocks: usize,
    pub adapted_blocks: usize,
    /// Background-to-foreground copies.
    pub foreground_updates: usize,
    /// Background filters discarded as worse than the foreground.
    pub background_resets: usize,
    pub divergence_resets: usize,
    /// Instrumented flop count, using the same unit costs as [`aec_flops_estimate`].
    pub flops: f64,
}

pub struct AecOutput {
    pub error: TimeSignal,
    pub estimate: TimeSignal,
}

/// Smoothing of the per-block error energies compared by the two-path logic.
const ENERGY_SMOOTHING: f64 = 0.5;

impl AecState {
    pub fn new(config: AecConfig) -> Result<Self> {
        config.validate()?;
        let n = 2 * config.block_len;
        let mut planner = FftPlanner::new();
        let zero = vec![Complex64::new(0.0, 0.0); n];
        let p = config.partitions();
        Ok(Self {
            foreground: vec![zero.clone(); p],
            background: vec![zero.clone(); p],
            history: (0..p).map(|_| zero.clone()).collect(),
            prev_far: vec![0.0; config.block_len],
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
            converged: false,
            smoothed_fg: 0.0,
            smoothed_bg: 0.0,
            better_run: 0,
            worse_run: 0,
            stats: AecStats::default(),
            config,
        })
    }

    pub fn config(&self) -> &AecConfig {
        &self.config
    }

    /// Whether the output filter has reached `converged_erle_db` on some block.
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Time-domain taps of the output filter (length `filter_len`).
    pub fn taps(&self) -> Vec<f64> {
        let n = 2 * self.config.block_len;
        let mut out = Vec::with_capacity(self.config.partitions() * self.config.block_len);
        for w in &self.foreground {
            let mut buf = w.clone();
            self.ifft.process(&mut buf);
            out.extend(buf[..self.config.block_len].iter().map(|c| c.re / n as f64));
        }
        out.truncate(self.config.filter_len);
        out
    }

    /// Linear-convolution part of `weights` applied to the far-end history.
    fn filter(&self, weights: &[Vec<Complex64>]) -> Vec<f64> {
        let (b, n) = (self.config.block_len, 2 * self.config.block_len);
        let mut y = vec![Complex64::new(0.0, 0.0); n];
        for (w, xs) in weights.iter().zip(&self.history) {
            for ((acc, wv), xv) in y.iter_mut().zip(w).zip(xs) {
                *acc += wv * xv;
            }
        }
        self.ifft.process(&mut y);
        y[b..].iter().map(|c| c.re / n as f64).collect()
    }

    /// Processes one block of far-end and microphone samples, writing the echo
    /// estimate and error.
    fn process_block(&mut self, far: &[f64], mic: &[f64], est: &mut [f64], err: &mut [f64]) {
        let b = self.config.block_len;
        let n = 2 * b;
        let nf = n as f64;
        let p = self.config.partitions();
        self.stats.blocks += 1;
        if p == 0 {
            est.iter_mut().for_each(|a| *a = 0.0);
            err.copy_from_slice(mic);
            return;
        }

        let mut x = Vec::with_capacity(n);
        x.extend(self.prev_far.iter().map(|&v| Complex64::new(v, 0.0)));
        x.extend(far.iter().map(|&v| Complex64::new(v, 0.0)));
        self.fft.process(&mut x);
        self.prev_far.copy_from_slice(far);
        self.history.pop_back();
        self.history.push_front(x);

        for (i, y) in self.filter(&self.foreground).into_iter().enumerate() {
            let a = if y.is_finite() { (y * ESTIMATE_GRID).round() / ESTIMATE_GRID } else { 0.0 };
            est[i] = a;
            err[i] = mic[i] - a;
        }
        let bg_err: Vec<f64> = self.filter(&self.background).iter().zip(mic).map(|(y, m)| m - y).collect();
        let (filtering, _) = block_flops(&self.config);
        self.stats.flops += filtering;

        if self.config.step_size == 0.0 {
            return;
        }
        let far_ms = far.iter().map(|v| v * v).sum::<f64>() / b as f64;
        if far_ms <= 10f64.powf(self.config.far_end_floor_dbfs / 10.0) {
            return;
        }
        let energy = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let (fg_energy, bg_energy, mic_energy) = (energy(err), energy(&bg_err), energy(mic));
        if mic_energy > 0.0 && fg_energy * 10f64.powf(self.config.converged_erle_db / 10.0) <= mic_energy {
            self.converged = true;
        }
        let s = ENERGY_SMOOTHING;
        self.smoothed_fg = s * self.smoothed_fg + (1.0 - s) * fg_energy;
        self.smoothed_bg = s * self.smoothed_bg + (1.0 - s) * bg_energy;
        let db = |v: f64| 10f64.powf(v / 10.0);
        if self.smoothed_bg * db(self.config.copy_margin_db) < self.smoothed_fg {
            self.better_run += 1;
        } else {
            self.better_run = 0;
        }
        if self.smoothed_bg > self.smoothed_fg * db(self.config.reset_margin_db) {
            self.worse_run += 1;
        } else {
            self.worse_run = 0;
        }
        let k = self.config.decision_blocks.max(1);
        if self.better_run >= k {
            self.foreground.clone_from(&self.background);
            self.smoothed_fg = self.smoothed_bg;
            self.better_run = 0;
            self.stats.foreground_updates += 1;
        } else if self.worse_run >= k {
            // Double talk or divergence pulled the background away.
            self.background.clone_from(&self.foreground);
            self.smoothed_bg = self.smoothed_fg;
            self.worse_run = 0;
            self.stats.background_resets += 1;
            return;
        }

        let mut e = vec![Complex64::new(0.0, 0.0); n];
        for (c, &v) in e[b..].iter_mut().zip(bg_err.iter()) {
            *c = Complex64::new(v, 0.0);
        }
        self.fft.process(&mut e);

        // Per-bin power of the full regressor; the factor B/N matches time-domain NLMS.
        let mut norm = vec![0.0; n];
        for xs in &self.history {
            for (acc, xv) in norm.iter_mut().zip(xs) {
                *acc += xv.norm_sqr() * (b as f64 / nf);
            }
        }
        let delta = self.config.regularization * norm.iter().sum::<f64>() / nf + 1e-12;
        norm.iter_mut().for_each(|v| *v += delta);

        let mu = self.config.step_size;
        let last_len = self.config.filter_len - (p - 1) * b;
        let mut grad = vec![Complex64::new(0.0, 0.0); n];
        let mut finite = true;
        for (k, (w, xs)) in self.background.iter_mut().zip(&self.history).enumerate() {
            for (((g, xv), ev), nv) in grad.iter_mut().zip(xs).zip(&e).zip(&norm) {
                *g = xv.conj() * ev / *nv;
            }
            self.ifft.process(&mut grad);
            let keep = if k + 1 == p { last_len } else { b };
            for g in &mut grad[keep..] {
                *g = Complex64::new(0.0, 0.0);
            }
            for g in &mut grad[..keep] {
                *g = Complex64::new(g.re / nf, 0.0);
            }
            self.fft.process(&mut grad);
            for (wv, g) in w.iter_mut().zip(&grad) {
                *wv += g * mu;
                finite &= wv.re.is_finite() && wv.im.is_finite();
            }
        }
        let (_, adaptation) = block_flops(&self.config);
        self.stats.flops += adaptation;
        self.stats.adapted_blocks += 1;
        if !finite {
            log::warn!("AEC background taps became non-finite; restoring the output filter");
            self.background.clone_from(&self.foreground);
            self.stats.divergence_resets += 1;
        }
    }
}

/// Runs the canceler over a whole utterance, continuing from `state`.
///
/// Returns the error `e = m - a` and the echo estimate `a`.
pub fn aec_process(mic: &TimeSignal, far_end: &TimeSignal, state: &mut AecState) -> Result<AecOutput> {
    if mic.len() != far_end.len() {
        return Err(Error::Shape(format!(
            "microphone has {} samples, far end {}",
            mic.len(),
            far_end.len()
        )));
    }
    let b = state.config.block_len;
    let len = mic.len();
    let mut est = vec![0.0; len];
    let mut err = vec![0.0; len];
    let (mut far_blk, mut mic_blk) = (vec![0.0; b], vec![0.0; b]);
    let (mut est_blk, mut err_blk) = (vec![0.0; b], vec![0.0; b]);
    let mut start = 0;
    while start < len {
        let end = (start + b).min(len);
        let used = end - start;
        far_blk[..used].copy_from_slice(&far_end.samples()[start..end]);
        mic_blk[..used].copy_from_slice(&mic.samples()[start..end]);
        far_blk[used..].iter_mut().for_each(|v| *v = 0.0);
        mic_blk[used..].iter_mut().for_each(|v| *v = 0.0);
        state.process_block(&far_blk, &mic_blk, &mut est_blk, &mut err_blk);
        est[start..end].copy_from_slice(&est_blk[..used]);
        for i in 0..used {
            // Recomputed from the stored estimate so e[n] = m[n] - a[n] holds verbatim.
            err[start + i] = mic.samples()[start + i] - est[start + i];
        }
        start = end;
    }
    Ok(AecOutput {
        error: TimeSignal::new(err, Role::AecError)?,
        estimate: TimeSignal::new(est, Role::AecEstimate)?,
    })
}

/// Emulates an already-converged canceler: `prime_passes` adaptation passes over
/// the utterance, then the reported pass continuing from the adapted state.
pub fn aec_run(mic: &TimeSignal, far_end: &TimeSignal, cfg: &AecConfig, prime_passes: usize) -> Result<AecOutput> {
    let mut state = AecState::new(cfg.clone())?;
    for _ in 0..prime_passes {
        aec_process(mic, far_end, &mut state)?;
    }
    aec_process(mic, far_end, &mut state)
}
