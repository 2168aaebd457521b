//! Small dense networks with hand-written backpropagation.
//!
//! Batches are row-major `rows × width` slices. Every row is computed with
//! the same fixed summation order, so a row's output never depends on the
//! other rows in the batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `y = W x + b`, `W` stored row-major as `output × input`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            weight: vec![0.0; input * output],
            bias: vec![0.0; output],
        }
    }

    /// Uniform Glorot initialization, zero bias.
    pub fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            input,
            output,
            weight: (0..input * output).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; output],
        }
    }

    fn check(&self) -> Result<()> {
        if self.weight.len() != self.input * self.output || self.bias.len() != self.output {
            return Err(Error::ShapeMismatch(format!(
                "linear layer {}x{} has {} weights and {} biases",
                self.output,
                self.input,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (n_in, n_out) = (self.input, self.output);
        let mut y = vec![0.0; rows * n_out];
        for r in 0..rows {
            let xr = &x[r * n_in..(r + 1) * n_in];
            let yr = &mut y[r * n_out..(r + 1) * n_out];
            for (o, out) in yr.iter_mut().enumerate() {
                let w = &self.weight[o * n_in..(o + 1) * n_in];
                let mut acc = self.bias[o];
                for (a, b) in w.iter().zip(xr) {
                    acc += a * b;
                }
                *out = acc;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear) -> Vec<f64> {
        let (n_in, n_out) = (self.input, self.output);
        let mut dx = vec![0.0; rows * n_in];
        for r in 0..rows {
            let xr = &x[r * n_in..(r + 1) * n_in];
            let dyr = &dy[r * n_out..(r + 1) * n_out];
            let dxr = &mut dx[r * n_in..(r + 1) * n_in];
            for (o, &g) in dyr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let w = &self.weight[o * n_in..(o + 1) * n_in];
                let gw = &mut grad.weight[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    gw[i] += g * xr[i];
                    dxr[i] += g * w[i];
                }
            }
        }
        dx
    }
}

/// Linear layers with SiLU between them, and after the last one when
/// `final_activation` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub final_activation: bool,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    rows: usize,
    /// Input of each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn random(widths: &[usize], final_activation: bool, rng: &mut impl Rng) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Linear::random(w[0], w[1], rng)).collect(),
            final_activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Linear::zeros(l.input, l.output)).collect(),
            final_activation: self.final_activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn check(&self, input: usize, output: usize, name: &str) -> Result<()> {
        for l in &self.layers {
            l.check()?;
        }
        let chained = self.layers.windows(2).all(|w| w[0].output == w[1].input);
        if self.layers.is_empty() || !chained || self.input_dim() != input || self.output_dim() != output {
            return Err(Error::ShapeMismatch(format!(
                "{name}: expected {input} -> {output}, found {} -> {}",
                self.input_dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.final_activation
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        self.forward_cached(x.to_vec(), rows).0
    }

    pub fn forward_cached(&self, x: Vec<f64>, rows: usize) -> (Vec<f64>, MlpCache) {
        let mut cache = MlpCache {
            rows,
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x;
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&cur, rows);
            let next = if self.activated(k) {
                pre.iter().map(|&v| silu(v)).collect()
            } else {
                pre.clone()
            };
            cache.inputs.push(cur);
            cache.pre.push(pre);
            cur = next;
        }
        (cur, cache)
    }

    pub fn backward(&self, cache: &MlpCache, dy: Vec<f64>, grad: &mut Mlp) -> Vec<f64> {
        let mut d = dy;
        for k in (0..self.layers.len()).rev() {
            if self.activated(k) {
                for (g, &p) in d.iter_mut().zip(&cache.pre[k]) {
                    *g *= silu_grad(p);
                }
            }
            d = self.layers[k].backward(&cache.inputs[k], &d, cache.rows, &mut grad.layers[k]);
        }
        d
    }

    pub fn params(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}
