//! Dense multilayer perceptrons with hand-written backpropagation.
//!
//! Everything is `f64`. Weights are stored row-major as `[out × in]`.
//! Both target models are built from [`Mlp`]; the attacks only ever need
//! [`Mlp::forward`], while training and DP-SGD use [`Mlp::backward`] and the
//! gradient carrier [`GradientSet`].

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `[out_dim × in_dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| {
                let mut acc = 0.0;
                for (w, x) in row.iter().zip(input) {
                    acc += w * x;
                }
                acc + b
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(Error::Shape(format!(
                "layer {}x{} holds {} weights and {} biases",
                self.out_dim,
                self.in_dim,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer intermediate values kept from a forward pass.
struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl Mlp {
    /// Builds a network from explicit layers, checking that dimensions chain
    /// and parameters are finite.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    /// Glorot-initialized network. `dims` lists every width including input
    /// and output; `activations` has one entry per layer.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        Self::build(dims, activations, |i, o, a| Layer::glorot(i, o, a, rng))
    }

    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        Self::build(dims, activations, Layer::zeros)
    }

    fn build(
        dims: &[usize],
        activations: &[Activation],
        mut make: impl FnMut(usize, usize, Activation) -> Layer,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Shape(format!(
                "{} widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| make(w[0], w[1], a))
            .collect();
        Self::from_layers(layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for layer in &self.layers {
            layer.check()?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        if !self.is_finite() {
            return Err(Error::Numeric("network parameters are not finite".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects input of length {}, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer
                .pre_activation(&x)
                .into_iter()
                .map(|z| layer.activation.apply(z))
                .collect();
        }
        Ok(x)
    }

    fn forward_trace(&self, input: &[f64]) -> Trace {
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&x);
            let a: Vec<f64> = z.iter().map(|&z| layer.activation.apply(z)).collect();
            trace.inputs.push(x);
            trace.pre.push(z);
            x = a.clone();
            trace.outputs.push(a);
        }
        trace
    }

    /// Gradients of a scalar loss with respect to every parameter, given the
    /// gradient of that loss with respect to the network output.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<GradientSet> {
        self.backward_with_input(input, upstream).map(|(g, _)| g)
    }

    /// Like [`Mlp::backward`], also returning the gradient with respect to
    /// the input vector (needed to push a discriminator loss into a
    /// generator).
    pub fn backward_with_input(
        &self,
        input: &[f64],
        upstream: &[f64],
    ) -> Result<(GradientSet, Vec<f64>)> {
        self.check_input(input)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient has length {}, network output is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let trace = self.forward_trace(input);
        let mut grads = GradientSet::zeros_like(self);
        let mut delta_out = upstream.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let delta: Vec<f64> = delta_out
                .iter()
                .zip(&trace.pre[k])
                .zip(&trace.outputs[k])
                .map(|((d, &z), &a)| d * layer.activation.derivative(z, a))
                .collect();
            let g = &mut grads.layers[k];
            let x = &trace.inputs[k];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] = d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, &xi) in row.iter_mut().zip(x) {
                    *w = d * xi;
                }
            }
            let mut prev = vec![0.0; layer.in_dim];
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            delta_out = prev;
        }
        Ok((grads, delta_out))
    }

    /// Serializes to the JSON checkpoint format. `f64` values are written
    /// in shortest round-trip form, so `load(save(net))` is bit-identical.
    pub fn to_json(&self) -> Result<String> {
        let ckpt = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            layers: &self.layers,
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        Self::from_layers(ckpt.layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

const CHECKPOINT_FORMAT: &str = "trajaudit-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    layers: &'a [Layer],
}

#[derive(Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter of an [`Mlp`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Global ℓ2 norm over all entries.
    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        self.check_congruent_grads(other)?;
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
        Ok(())
    }

    fn check_congruent_grads(&self, other: &GradientSet) -> Result<()> {
        let same =
            self.layers.len() == other.layers.len()
                && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                    a.weights.len() == b.weights.len() && a.bias.len() == b.bias.len()
                });
        if same {
            Ok(())
        } else {
            Err(Error::Shape("gradient sets have different shapes".into()))
        }
    }

    pub fn check_congruent(&self, net: &Mlp) -> Result<()> {
        let same =
            self.layers.len() == net.layers.len()
                && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                    g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len()
                });
        if same {
            Ok(())
        } else {
            Err(Error::Shape("gradient set does not match network".into()))
        }
    }
}

fn params_mut(net: &mut Mlp) -> impl Iterator<Item = &mut f64> {
    net.layers
        .iter_mut()
        .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
}

/// Plain gradient descent: `θ ← θ − lr·g`.
pub fn sgd_step(net: &mut Mlp, grads: &GradientSet, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    grads.check_congruent(net)?;
    for (p, g) in params_mut(net).zip(grads.values()) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: GradientSet,
    v: GradientSet,
    t: i32,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &GradientSet) -> Result<()> {
        grads.check_congruent(net)?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params_mut(net)
            .zip(grads.values())
            .zip(self.m.values_mut())
            .zip(self.v.values_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        Ok(())
    }
}

/// Either optimizer behind one interface, so training loops stay agnostic.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &Mlp, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(net, lr)),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &GradientSet) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_step(net, grads, *lr),
            Optimizer::Adam(adam) => adam.step(net, grads),
        }
    }
}
