use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one entry per trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamState {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self { config, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f32], grad: &[f32], lr: f64) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        let step = (lr / c1) as f32;
        let c2 = c2 as f32;
        let eps = eps as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let denom = (*v / c2).sqrt() + eps;
            *p -= step * *m / denom;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(AdamConfig::default(), 3);
        let mut p = vec![0.5f32, -1.0, 2.0];
        let before = p.clone();
        for _ in 0..10 {
            s.update(&mut p, &[0.0; 3], 1e-3);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let mut s = AdamState::new(AdamConfig::default(), 2);
        let mut p = vec![0.0f32, 0.0];
        s.update(&mut p, &[3.0, -0.25], 0.01);
        assert!((p[0] + 0.01).abs() < 1e-7);
        assert!((p[1] - 0.01).abs() < 1e-7);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = AdamState::new(AdamConfig::default(), 1);
        let mut p = vec![5.0f32];
        for _ in 0..3000 {
            let g = [2.0 * (p[0] - 1.5)];
            s.update(&mut p, &g, 0.01);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }
}
