use crate::aec::{aec_run, AecConfig};
use crate::error::{Error, Result};
use crate::signal::{apply_norm, fit_norm, stft, AmpMatrix, NormStats, Spectrogram, TimeSignal, N_BINS};
use crate::unet::Tensor;

/// Frames per training block and inference window.
pub const BLOCK_FRAMES: usize = 30;

/// AEC error and estimate amplitude spectra of one utterance, plus the
/// near-end target when known.
#[derive(Debug, Clone)]
pub struct UtteranceSpectra {
    pub error: Spectrogram,
    pub estimate: Spectrogram,
    pub target: Option<Spectrogram>,
}

/// Runs the AEC over `mic` / `far_end` and returns `(e, a)`.
pub fn aec_signals(mic: &TimeSignal, far_end: &TimeSignal, cfg: &AecConfig, prime_passes: usize) -> Result<(TimeSignal, TimeSignal)> {
    let out = aec_run(mic, far_end, cfg, prime_passes)?;
    Ok((out.error, out.estimate))
}

impl UtteranceSpectra {
    pub fn new(error: &TimeSignal, estimate: &TimeSignal, target: Option<&TimeSignal>) -> Result<Self> {
        if error.len() != estimate.len() || target.is_some_and(|d| d.len() != error.len()) {
            return Err(Error::Shape("utterance stems differ in length".into()));
        }
        Ok(Self { error: stft(error)?, estimate: stft(estimate)?, target: target.map(stft).transpose()? })
    }
}

/// Per-bin statistics over the network inputs (error and estimate spectra) of
/// the training utterances.
pub fn fit_input_norm(utts: &[UtteranceSpectra]) -> Result<NormStats> {
    fit_norm(utts.iter().flat_map(|u| [&u.error.amplitudes, &u.estimate.amplitudes]))
}

/// Non-overlapping normalized 30-frame blocks, stored flat in f32.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockSet {
    inputs: Vec<f32>,
    targets: Vec<f32>,
}

const BLOCK_LEN: usize = BLOCK_FRAMES * N_BINS;

fn push_block(dst: &mut Vec<f32>, m: &AmpMatrix, start: usize) {
    dst.extend(m.as_slice()[start * N_BINS..(start + BLOCK_FRAMES) * N_BINS].iter().map(|&v| v as f32));
}

impl BlockSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.targets.len() / BLOCK_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Cuts one utterance into blocks; the trailing partial block is dropped.
    /// Returns the number of blocks added.
    pub fn push_utterance(&mut self, utt: &UtteranceSpectra, stats: &NormStats) -> Result<usize> {
        let target = utt.target.as_ref().ok_or_else(|| Error::InvalidArgument("training utterance has no target".into()))?;
        let e = apply_norm(&utt.error.amplitudes, stats)?;
        let a = apply_norm(&utt.estimate.amplitudes, stats)?;
        let d = apply_norm(&target.amplitudes, stats)?;
        let n = e.rows() / BLOCK_FRAMES;
        for k in 0..n {
            push_block(&mut self.inputs, &e, k * BLOCK_FRAMES);
            push_block(&mut self.inputs, &a, k * BLOCK_FRAMES);
            push_block(&mut self.targets, &d, k * BLOCK_FRAMES);
        }
        Ok(n)
    }

    /// Adds one already-normalized block: `input` is `2 × 30 × 161`, `target` `30 × 161`.
    pub fn push_block(&mut self, input: &[f32], target: &[f32]) -> Result<()> {
        if input.len() != 2 * BLOCK_LEN || target.len() != BLOCK_LEN {
            return Err(Error::Shape(format!("block of {} / {} values", input.len(), target.len())));
        }
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
        Ok(())
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * 2 * BLOCK_LEN..(i + 1) * 2 * BLOCK_LEN]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        &self.targets[i * BLOCK_LEN..(i + 1) * BLOCK_LEN]
    }

    /// Stacks the chosen blocks into `(N, 2, 30, 161)` inputs and `(N, 1, 30, 161)` targets.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let mut x = Vec::with_capacity(idx.len() * 2 * BLOCK_LEN);
        let mut d = Vec::with_capacity(idx.len() * BLOCK_LEN);
        for &i in idx {
            x.extend_from_slice(self.input(i));
            d.extend_from_slice(self.target(i));
        }
        let n = idx.len();
        (
            Tensor::from_vec(n, 2, BLOCK_FRAMES, N_BINS, x).expect("block layout"),
            Tensor::from_vec(n, 1, BLOCK_FRAMES, N_BINS, d).expect("block layout"),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Role;

    fn ramp(len: usize, f: f64, role: Role) -> TimeSignal {
        TimeSignal::new((0..len).map(|i| 0.3 * (i as f64 * f).sin()).collect(), role).unwrap()
    }

    #[test]
    fn blocks_drop_trailing_frames() {
        // 1 s = 99 frames -> 3 blocks of 30.
        let e = ramp(16000, 0.01, Role::AecError);
        let a = ramp(16000, 0.02, Role::AecEstimate);
        let d = ramp(16000, 0.03, Role::NearEnd);
        let utt = UtteranceSpectra::new(&e, &a, Some(&d)).unwrap();
        let stats = fit_input_norm(std::slice::from_ref(&utt)).unwrap();
        let mut set = BlockSet::new();
        assert_eq!(set.push_utterance(&utt, &stats).unwrap(), 3);
        assert_eq!(set.len(), 3);
        let (x, t) = set.batch(&[2, 0]);
        assert_eq!(x.shape(), (2, 2, 30, 161));
        assert_eq!(t.shape(), (2, 1, 30, 161));
        // Inputs are normalized with statistics fitted on them.
        assert!(x.data.iter().all(|&v| (-1e-6..=1.0 + 1e-6).contains(&v)));
        assert_eq!(x.sample(1), set.input(0));
    }

    #[test]
    fn missing_target_rejected() {
        let e = ramp(8000, 0.01, Role::AecError);
        let utt = UtteranceSpectra::new(&e, &e, None).unwrap();
        let stats = fit_input_norm(std::slice::from_ref(&utt)).unwrap();
        assert!(BlockSet::new().push_utterance(&utt, &stats).is_err());
    }
}
