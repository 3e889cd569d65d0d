use super::stft::{frame_count, FRAME_LEN, HOP};

/// Frame level, in dBFS, above which a stem counts as active.
pub const ACTIVE_DBFS: f64 = -40.0;

/// Sum of squares of each 20 ms frame (hop 10 ms).
pub fn frame_energies(x: &[f64]) -> Vec<f64> {
    (0..frame_count(x.len()))
        .map(|k| x[k * HOP..k * HOP + FRAME_LEN].iter().map(|v| v * v).sum())
        .collect()
}

/// Frame level in dBFS: mean square relative to a full-scale constant.
pub fn energy_to_dbfs(energy: f64) -> f64 {
    10.0 * (energy / FRAME_LEN as f64).max(1e-20).log10()
}

/// Per-frame activity against an absolute dBFS threshold.
pub fn active_frames(x: &[f64], threshold_dbfs: f64) -> Vec<bool> {
    frame_energies(x).into_iter().map(|e| energy_to_dbfs(e) > threshold_dbfs).collect()
}
