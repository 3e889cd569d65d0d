use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scalar::Scalar;
use super::{count_params, UNetConfig};
use crate::error::{Error, Result};

/// Channel shape of one separable layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub level: usize,
    pub c_in: usize,
    pub c_out: usize,
}

/// Offsets of one layer's tensors inside the flat parameter store.
#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerOffsets {
    depthwise: usize,
    pointwise: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

/// Borrowed view of one layer's parameters.
pub struct LayerView<'a, T> {
    pub shape: &'a LayerShape,
    pub depthwise: &'a [T],
    pub pointwise: &'a [T],
    pub bias: &'a [T],
    pub gamma: &'a [T],
    pub beta: &'a [T],
    pub running_mean: &'a [T],
    pub running_var: &'a [T],
}

/// All network parameters. Trainable values live in one flat vector (so the
/// optimizer and serializer can treat them uniformly) and batch-norm running
/// statistics in another.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetWeights<T> {
    config: UNetConfig,
    shapes: Vec<LayerShape>,
    offsets: Vec<LayerOffsets>,
    head_weight: usize,
    head_bias: usize,
    pub params: Vec<T>,
    pub running: Vec<T>,
}

/// Initial bias of the output projection, the middle of the normalized target
/// range, so the output ReLU starts out active.
pub const HEAD_BIAS_INIT: f64 = 0.5;

impl<T: Scalar> UNetWeights<T> {
    /// Zero kernels, unit batch-norm scale, unit running variance.
    pub fn zeros(config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        let (mut p, mut r) = (0usize, 0usize);
        let mut offsets = Vec::with_capacity(shapes.len());
        for s in &shapes {
            let depthwise = p;
            let pointwise = depthwise + 9 * s.c_in;
            let bias = pointwise + s.c_in * s.c_out;
            let gamma = bias + s.c_out;
            let beta = gamma + s.c_out;
            p = beta + s.c_out;
            offsets.push(LayerOffsets { depthwise, pointwise, bias, gamma, beta, running_mean: r, running_var: r + s.c_out });
            r += 2 * s.c_out;
        }
        let head_weight = p;
        let head_bias = p + config.widths[0] * config.output_channels;
        p = head_bias + config.output_channels;
        let mut w = Self {
            config: config.clone(),
            shapes,
            offsets,
            head_weight,
            head_bias,
            params: vec![T::zero(); p],
            running: vec![T::zero(); r],
        };
        for i in 0..w.shapes.len() {
            let (o, c) = (w.offsets[i].clone(), w.shapes[i].c_out);
            w.params[o.gamma..o.gamma + c].iter_mut().for_each(|v| *v = T::one());
            w.running[o.running_var..o.running_var + c].iter_mut().for_each(|v| *v = T::one());
        }
        Ok(w)
    }

    /// Fan-in scaled uniform kernels (unit-variance preserving), zero layer
    /// biases and [`HEAD_BIAS_INIT`] on the output projection.
    pub fn init(config: &UNetConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |slice: &mut [T], fan_in: usize| {
            let bound = (3.0 / fan_in as f64).sqrt();
            for v in slice {
                *v = T::from_f64(rng.random_range(-bound..bound));
            }
        };
        for i in 0..w.shapes.len() {
            let (o, s) = (w.offsets[i].clone(), w.shapes[i].clone());
            fill(&mut w.params[o.depthwise..o.pointwise], 9);
            fill(&mut w.params[o.pointwise..o.bias], s.c_in);
        }
        let (hw, hb) = (w.head_weight, w.head_bias);
        fill(&mut w.params[hw..hb], config.widths[0]);
        w.params[hb] = T::from_f64(HEAD_BIAS_INIT);
        Ok(w)
    }

    /// Rebuilds weights from stored vectors, validating lengths.
    pub fn from_parts(config: &UNetConfig, params: Vec<T>, running: Vec<T>) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        if params.len() != w.params.len() || running.len() != w.running.len() {
            return Err(Error::Shape(format!(
                "weights have {}/{} values, architecture needs {}/{}",
                params.len(),
                running.len(),
                w.params.len(),
                w.running.len()
            )));
        }
        w.params = params;
        w.running = running;
        w.check_running_var()?;
        Ok(w)
    }

    pub fn check_running_var(&self) -> Result<()> {
        for (i, s) in self.shapes.iter().enumerate() {
            let o = &self.offsets[i];
            if self.running[o.running_var..o.running_var + s.c_out].iter().any(|v| !(*v > T::zero())) {
                return Err(Error::InvalidArgument(format!("running variance of {} not positive", s.name)));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn n_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn layer(&self, i: usize) -> LayerView<'_, T> {
        let (o, s) = (&self.offsets[i], &self.shapes[i]);
        LayerView {
            shape: s,
            depthwise: &self.params[o.depthwise..o.pointwise],
            pointwise: &self.params[o.pointwise..o.bias],
            bias: &self.params[o.bias..o.gamma],
            gamma: &self.params[o.gamma..o.beta],
            beta: &self.params[o.beta..o.beta + s.c_out],
            running_mean: &self.running[o.running_mean..o.running_var],
            running_var: &self.running[o.running_var..o.running_var + s.c_out],
        }
    }

    pub fn head_weight(&self) -> &[T] {
        &self.params[self.head_weight..self.head_bias]
    }

    pub fn head_bias(&self) -> &[T] {
        &self.params[self.head_bias..]
    }

    /// Named parameter groups as ranges into `params`, in declared order.
    pub fn param_groups(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut g = Vec::new();
        for (s, o) in self.shapes.iter().zip(&self.offsets) {
            g.push((format!("{}.depthwise", s.name), o.depthwise..o.pointwise));
            g.push((format!("{}.pointwise", s.name), o.pointwise..o.bias));
            g.push((format!("{}.bias", s.name), o.bias..o.gamma));
            g.push((format!("{}.bn_scale", s.name), o.gamma..o.beta));
            g.push((format!("{}.bn_shift", s.name), o.beta..o.beta + s.c_out));
        }
        g.push(("head.weight".into(), self.head_weight..self.head_bias));
        g.push(("head.bias".into(), self.head_bias..self.params.len()));
        g
    }

    /// Ranges of a layer's depthwise, pointwise, bias, scale and shift tensors.
    pub(crate) fn layer_ranges(&self, i: usize) -> [std::ops::Range<usize>; 5] {
        let (o, c) = (&self.offsets[i], self.shapes[i].c_out);
        [
            o.depthwise..o.pointwise,
            o.pointwise..o.bias,
            o.bias..o.gamma,
            o.gamma..o.beta,
            o.beta..o.beta + c,
        ]
    }

    pub(crate) fn head_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        (self.head_weight..self.head_bias, self.head_bias..self.params.len())
    }

    /// Mutable access to a layer's running mean and variance.
    pub fn running_mut(&mut self, i: usize) -> (&mut [T], &mut [T]) {
        let (o, c) = (&self.offsets[i], self.shapes[i].c_out);
        let (mean, var) = self.running[o.running_mean..o.running_var + c].split_at_mut(c);
        (mean, var)
    }

    /// Mutable slice of a named group (see [`Self::param_groups`]).
    pub fn group_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.param_groups().into_iter().find(|(n, _)| n == name)?.1;
        Some(&mut self.params[range])
    }

    pub fn cast<U: Scalar>(&self) -> UNetWeights<U> {
        UNetWeights {
            config: self.config.clone(),
            shapes: self.shapes.clone(),
            offsets: self.offsets.clone(),
            head_weight: self.head_weight,
            head_bias: self.head_bias,
            params: self.params.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            running: self.running.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params.len()
    }

    /// Sanity check that the store agrees with the closed-form count.
    pub fn matches_closed_form(&self) -> bool {
        let c = count_params(&self.config);
        c.trainable == self.params.len() && c.running == self.running.len()
    }
}
