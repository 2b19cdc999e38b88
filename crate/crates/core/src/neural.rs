//! Dense layers with hand-written backward passes and an Adam optimizer.
//!
//! Inputs are row-major batches: one row per node, edge or sample.
//! Gradients are carried in values of the same type as the parameters they
//! belong to.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected} input columns, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite gradient in parameter block `{0}`")]
    NonFinite(String),
    #[error("optimizer state does not match the parameter layout")]
    Layout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// `y = act(x Wᵀ + b)` with `W` of shape (out × in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Array2<f64>,
    pre: Array2<f64>,
}

impl DenseLayer {
    /// Uniform ±√(6/(fan_in+fan_out)) weights, zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.gen_range(-limit..limit));
        Self { weights, bias: Array1::zeros(fan_out), activation }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self { weights: Array2::zeros((fan_out, fan_in)), bias: Array1::zeros(fan_out), activation }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    fn check(&self, x: &Array2<f64>) -> Result<(), NeuralError> {
        if x.ncols() != self.fan_in() {
            return Err(NeuralError::Shape { expected: self.fan_in(), got: x.ncols() });
        }
        Ok(())
    }

    fn affine(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }

    fn activate(&self, mut z: Array2<f64>) -> Array2<f64> {
        if self.activation == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
        z
    }

    pub fn infer(&self, x: &Array2<f64>) -> Result<Array2<f64>, NeuralError> {
        self.check(x)?;
        Ok(self.activate(self.affine(x)))
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, LayerCache), NeuralError> {
        self.check(x)?;
        let pre = self.affine(x);
        let y = self.activate(pre.clone());
        Ok((y, LayerCache { input: x.clone(), pre }))
    }

    /// Returns `dL/dx` and the parameter gradient.
    pub fn backward(&self, cache: &LayerCache, dy: &Array2<f64>) -> Result<(Array2<f64>, DenseLayer), NeuralError> {
        if dy.ncols() != self.fan_out() || dy.nrows() != cache.input.nrows() || cache.input.ncols() != self.fan_in() {
            return Err(NeuralError::Shape { expected: self.fan_out(), got: dy.ncols() });
        }
        let dz = match self.activation {
            Activation::Identity => dy.clone(),
            Activation::Relu => {
                let mut dz = dy.clone();
                dz.zip_mut_with(&cache.pre, |d, &p| {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                });
                dz
            }
        };
        let grad = DenseLayer {
            weights: dz.t().dot(&cache.input).as_standard_layout().into_owned(),
            bias: dz.sum_axis(Axis(0)),
            activation: self.activation,
        };
        Ok((dz.dot(&self.weights), grad))
    }
}

/// Stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct MlpCache(Vec<LayerCache>);

impl Mlp {
    /// `widths = [in, h1, ..., out]`; hidden layers use ReLU, the last layer
    /// uses `output`.
    pub fn init<R: Rng>(widths: &[usize], output: Activation, rng: &mut R) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { Activation::Relu };
                DenseLayer::init(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| DenseLayer::zeros(l.fan_in(), l.fan_out(), l.activation)).collect(),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn fan_out(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn infer(&self, x: &Array2<f64>) -> Result<Array2<f64>, NeuralError> {
        let mut h = self.layers[0].infer(x)?;
        for layer in &self.layers[1..] {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpCache), NeuralError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&h)?;
            caches.push(c);
            h = y;
        }
        Ok((h, MlpCache(caches)))
    }

    pub fn backward(&self, cache: &MlpCache, dy: &Array2<f64>) -> Result<(Array2<f64>, Mlp), NeuralError> {
        if cache.0.len() != self.layers.len() {
            return Err(NeuralError::Layout);
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = dy.clone();
        for (layer, c) in self.layers.iter().zip(&cache.0).rev() {
            let (dx, g) = layer.backward(c, &d)?;
            grads.push(g);
            d = dx;
        }
        grads.reverse();
        Ok((d, Mlp { layers: grads }))
    }
}

/// Named flat views of every trainable block, in a fixed order.
pub trait Parameters {
    fn blocks(&self) -> Vec<(String, &[f64])>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn n_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// `self += other`, block by block.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for (_, block) in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl Parameters for DenseLayer {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        vec![
            ("weights".into(), self.weights.as_slice().expect("standard layout")),
            ("bias".into(), self.bias.as_slice().expect("standard layout")),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("weights".into(), self.weights.as_slice_mut().expect("standard layout")),
            ("bias".into(), self.bias.as_slice_mut().expect("standard layout")),
        ]
    }
}

impl Parameters for Mlp {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.blocks().into_iter().map(move |(n, b)| (format!("layer{i}.{n}"), b)))
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.blocks_mut().into_iter().map(move |(n, b)| (format!("layer{i}.{n}"), b)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<P: Parameters>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.blocks().iter().map(|(_, b)| vec![0.0; b.len()]).collect();
        Self { config, step: 0, first_moment: zeros.clone(), second_moment: zeros }
    }
}

/// One bias-corrected Adam update. Nothing is modified when a gradient
/// block contains a non-finite value.
pub fn optimizer_step<P: Parameters>(params: &mut P, grads: &P, state: &mut OptimizerState) -> Result<(), NeuralError> {
    let grad_blocks = grads.blocks();
    if grad_blocks.len() != state.first_moment.len() {
        return Err(NeuralError::Layout);
    }
    for (name, g) in &grad_blocks {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFinite(name.clone()));
        }
    }
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, ((_, p), (_, g))) in params.blocks_mut().into_iter().zip(grad_blocks).enumerate() {
        let (m, v) = (&mut state.first_moment[k], &mut state.second_moment[k]);
        if m.len() != p.len() {
            return Err(NeuralError::Layout);
        }
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
