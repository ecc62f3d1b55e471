//! Minimal differentiable building blocks: a parameter store, dense layers,
//! Adam, and Gaussian log-density helpers.

mod tape;

pub use tape::{sigmoid, softplus, AttentionGraph, Gradients, Tape, Var};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::seed::Rng;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named learnable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|m| m.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Put every tensor on the tape as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|m| tape.leaf(m.clone())).collect(),
        }
    }
}

/// Tape handles for a `Params`, index-aligned with it.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn grads(&self, g: &Gradients) -> Vec<Matrix> {
        self.vars.iter().map(|v| g.of(*v)).collect()
    }
}

pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.as_slice())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Fully connected layer `x · W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new(params: &mut Params, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let w = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit));
        Self {
            weight: params.add(format!("{name}.w"), w),
            bias: params.add(format!("{name}.b"), Matrix::zeros(1, fan_out)),
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.matmul(p.get(self.weight)).add_row(p.get(self.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Elu,
    Tanh,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Elu => x.elu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Feed-forward network; activation between layers, none after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(params: &mut Params, name: &str, widths: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(params, &format!("{name}.{k}"), w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, mut x: Var<'t>) -> Var<'t> {
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            x = layer.forward(p, x);
            if k < last {
                x = self.activation.apply(x);
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient when its global norm exceeds this (0 disables).
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

pub struct Adam {
    config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(params: &Params, config: AdamConfig) -> Self {
        let zeros: Vec<Matrix> = params
            .values()
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &[Matrix]) {
        let c = self.config;
        let scale = if c.clip_norm > 0.0 {
            let norm = global_norm(grads);
            if norm > c.clip_norm {
                c.clip_norm / norm
            } else {
                1.0
            }
        } else {
            1.0
        };
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (k, p) in params.values_mut().iter_mut().enumerate() {
            let g = grads[k].as_slice();
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            for (i, w) in p.as_mut_slice().iter_mut().enumerate() {
                let gi = g[i] * scale;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                *w -= c.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
            }
        }
    }
}

/// Elementwise Gaussian log-density `log N(x; mean, std²)` on the tape.
pub fn gaussian_log_density<'t>(x: Var<'t>, mean: Var<'t>, std: Var<'t>) -> Var<'t> {
    let z = x.sub(mean).div(std);
    z.square().scale(-0.5).sub(std.ln()).offset(-0.5 * LN_2PI)
}

pub fn gaussian_log_density_f64(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * LN_2PI
}

/// `rows × cols` standard normal draws.
pub fn standard_normal(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}
