use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Matrix, Result, TensorError};
use crate::rng::Rng;

/// Output nonlinearity of the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Categorical distribution over actions.
    Softmax,
    /// Single probability in (0, 1).
    Sigmoid,
    /// Unbounded linear output (regression critics).
    Linear,
}

impl Head {
    pub(crate) fn code(self) -> u8 {
        match self {
            Head::Softmax => 0,
            Head::Sigmoid => 1,
            Head::Linear => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Head> {
        match code {
            0 => Some(Head::Softmax),
            1 => Some(Head::Sigmoid),
            2 => Some(Head::Linear),
            _ => None,
        }
    }
}

/// Feed-forward network: tanh hidden layers, configurable head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    head: Head,
    generation: u64,
}

/// Gradient (or optimizer moment) with the same shape as an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations recorded by a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// `activations[0]` is the input, `activations[i]` the tanh output of hidden layer `i`.
    activations: Vec<Vec<f64>>,
    logits: Vec<f64>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Pre-head outputs of the last layer.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    // keep the head strictly inside (0, 1)
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl MlpParams {
    /// All-zero network.
    pub fn zeros(layer_sizes: &[usize], head: Head) -> Result<Self> {
        check_sizes(layer_sizes, head)?;
        let weights = layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            head,
            generation: 0,
        })
    }

    /// Glorot-uniform weights and zero biases. Policy heads get a small output
    /// layer so the initial action distribution is close to uniform.
    pub fn init(layer_sizes: &[usize], head: Head, rng: &mut Rng) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes, head)?;
        let last = params.weights.len() - 1;
        for (i, w) in params.weights.iter_mut().enumerate() {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            let scale = if i == last && head == Head::Softmax { 0.01 } else { 1.0 };
            for v in w.data_mut() {
                *v = scale * limit * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        Ok(params)
    }

    pub fn from_parts(layer_sizes: &[usize], head: Head, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        check_sizes(layer_sizes, head)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(TensorError::DimensionMismatch {
                what: "layer count",
                expected: layers,
                actual: weights.len().min(biases.len()),
            });
        }
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (fan_in, fan_out) = (layer_sizes[i], layer_sizes[i + 1]);
            if w.cols() != fan_in {
                return Err(TensorError::DimensionMismatch {
                    what: "weight columns",
                    expected: fan_in,
                    actual: w.cols(),
                });
            }
            if w.rows() != fan_out || b.len() != fan_out {
                return Err(TensorError::DimensionMismatch {
                    what: "layer outputs",
                    expected: fan_out,
                    actual: if w.rows() != fan_out { w.rows() } else { b.len() },
                });
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite("bias"));
            }
        }
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            head,
            generation: 0,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// Incremented on every in-place parameter update.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.data().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameters flattened in checkpoint order (per layer: weights then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(TensorError::DimensionMismatch {
                what: "flat parameter vector",
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("flat parameter vector"));
        }
        let mut rest = flat;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (wf, r) = rest.split_at(w.data().len());
            w.data_mut().copy_from_slice(wf);
            let (bf, r) = r.split_at(b.len());
            b.copy_from_slice(bf);
            rest = r;
        }
        self.generation += 1;
        Ok(())
    }

    pub(crate) fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.generation += 1;
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(TensorError::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("network input"));
        }
        Ok(())
    }

    fn apply_head(&self, logits: &[f64]) -> Vec<f64> {
        match self.head {
            Head::Softmax => softmax(logits),
            Head::Sigmoid => logits.iter().map(|&z| sigmoid(z)).collect(),
            Head::Linear => logits.to_vec(),
        }
    }

    /// Forward pass keeping every activation needed by backward.
    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let depth = self.weights.len();
        let mut activations = Vec::with_capacity(depth);
        activations.push(input.to_vec());
        let mut logits = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = Vec::with_capacity(w.rows());
            w.affine_into(activations.last().expect("input present"), b, &mut z);
            if i + 1 == depth {
                logits = z;
            } else {
                z.iter_mut().for_each(|v| *v = v.tanh());
                activations.push(z);
            }
        }
        let output = self.apply_head(&logits);
        Ok(ForwardCache {
            generation: self.generation,
            activations,
            logits,
            output,
        })
    }

    /// Pre-head outputs without recording a cache.
    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let depth = self.weights.len();
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            w.affine_into(&cur, b, &mut next);
            if i + 1 < depth {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Head output without recording a cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply_head(&self.logits(input)?))
    }

    /// Scalar output of a single-output network (sigmoid or linear head).
    pub fn scalar(&self, input: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(TensorError::DimensionMismatch {
                what: "scalar head outputs",
                expected: 1,
                actual: self.output_dim(),
            });
        }
        Ok(self.predict(input)?[0])
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.generation != self.generation {
            return Err(TensorError::StaleCache {
                cache: cache.generation,
                params: self.generation,
            });
        }
        if cache.activations.len() != self.weights.len() {
            return Err(TensorError::DimensionMismatch {
                what: "cached layer count",
                expected: self.weights.len(),
                actual: cache.activations.len(),
            });
        }
        for (a, &n) in cache.activations.iter().zip(&self.layer_sizes) {
            if a.len() != n {
                return Err(TensorError::DimensionMismatch {
                    what: "cached activation",
                    expected: n,
                    actual: a.len(),
                });
            }
        }
        if cache.logits.len() != self.output_dim() {
            return Err(TensorError::DimensionMismatch {
                what: "cached logits",
                expected: self.output_dim(),
                actual: cache.logits.len(),
            });
        }
        Ok(())
    }

    /// Gradient of the loss w.r.t. the pre-head outputs, given its gradient
    /// w.r.t. the head outputs.
    fn head_backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Vec<f64> {
        let out = &cache.output;
        match self.head {
            Head::Softmax => {
                let dot: f64 = out.iter().zip(output_grad).map(|(p, g)| p * g).sum();
                out.iter().zip(output_grad).map(|(p, g)| p * (g - dot)).collect()
            }
            Head::Sigmoid => out.iter().zip(output_grad).map(|(v, g)| g * v * (1.0 - v)).collect(),
            Head::Linear => output_grad.to_vec(),
        }
    }

    /// Adds `scale` times the parameter gradient to `grads`, starting from
    /// the gradient w.r.t. the pre-head outputs.
    pub fn accumulate_logit_grad(
        &self,
        cache: &ForwardCache,
        logit_grad: &[f64],
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<()> {
        self.check_cache(cache)?;
        if logit_grad.len() != self.output_dim() {
            return Err(TensorError::DimensionMismatch {
                what: "output gradient",
                expected: self.output_dim(),
                actual: logit_grad.len(),
            });
        }
        if logit_grad.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("output gradient"));
        }
        let mut delta = logit_grad.to_vec();
        for layer in (0..self.weights.len()).rev() {
            let input = &cache.activations[layer];
            grads.weights[layer].add_outer(&delta, input, scale);
            for (gb, d) in grads.biases[layer].iter_mut().zip(&delta) {
                *gb += scale * d;
            }
            if layer == 0 {
                break;
            }
            let mut prev = vec![0.0; input.len()];
            self.weights[layer].transpose_mul_acc(&delta, &mut prev);
            // input is the tanh output of the previous layer
            for (p, h) in prev.iter_mut().zip(input) {
                *p *= 1.0 - h * h;
            }
            delta = prev;
        }
        Ok(())
    }

    /// Same as [`accumulate_logit_grad`](Self::accumulate_logit_grad) but
    /// starting from the gradient w.r.t. the head outputs.
    pub fn accumulate_output_grad(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<()> {
        self.check_cache(cache)?;
        if output_grad.len() != self.output_dim() {
            return Err(TensorError::DimensionMismatch {
                what: "output gradient",
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        let logit_grad = self.head_backward(cache, output_grad);
        self.accumulate_logit_grad(cache, &logit_grad, scale, grads)
    }
}

fn check_sizes(layer_sizes: &[usize], head: Head) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(TensorError::DimensionMismatch {
            what: "layer_sizes length",
            expected: 2,
            actual: layer_sizes.len(),
        });
    }
    if let Some(&zero) = layer_sizes.iter().find(|&&n| n == 0) {
        return Err(TensorError::DimensionMismatch {
            what: "layer width",
            expected: 1,
            actual: zero,
        });
    }
    let out = *layer_sizes.last().expect("checked");
    if head == Head::Sigmoid && out != 1 {
        return Err(TensorError::DimensionMismatch {
            what: "sigmoid head outputs",
            expected: 1,
            actual: out,
        });
    }
    Ok(())
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradients {
            weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().flatten().copied().collect()
    }

    pub fn fill(&mut self, v: f64) {
        self.slices_mut().for_each(|s| s.fill(v));
    }

    pub fn scale(&mut self, k: f64) {
        self.slices_mut().flatten().for_each(|g| *g *= k);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slices().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().flatten().all(|g| g.is_finite())
    }

    /// Rescales so that the global norm is at most `max_norm`. Returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub(crate) fn same_shape(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.weights.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
            && self
                .biases
                .iter()
                .zip(&params.biases)
                .all(|(a, b)| a.len() == b.len())
    }
}

/// Forward pass returning the head output and the activation record.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let cache = params.forward(input)?;
    Ok((cache.output.clone(), cache))
}

/// Reverse-mode gradient of a scalar loss whose gradient w.r.t. the head
/// output is `output_grad`.
pub fn mlp_backward(params: &MlpParams, cache: &ForwardCache, output_grad: &[f64]) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(params);
    params.accumulate_output_grad(cache, output_grad, 1.0, &mut grads)?;
    Ok(grads)
}

/// Reverse-mode gradient given the loss gradient w.r.t. the pre-head outputs.
pub fn mlp_backward_logits(params: &MlpParams, cache: &ForwardCache, logit_grad: &[f64]) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(params);
    params.accumulate_logit_grad(cache, logit_grad, 1.0, &mut grads)?;
    Ok(grads)
}
