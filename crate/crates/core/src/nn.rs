//! Dense-network substrate.
//!
//! Layers store weights row-major with shape `(out_dim, in_dim)`. Gradients are
//! derived by hand for the fixed feed-forward stacks used by the model; there
//! is no general autodiff graph. All arithmetic is `f64`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Negative-side slope of [`Activation::LeakyRelu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Probabilities are clipped to `[CLIP_EPS, 1 - CLIP_EPS]` before any `log`.
pub const CLIP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_RELU_SLOPE * z
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation `z`, given `y = apply(z)`.
    #[inline]
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `y = activation(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    /// Row-major, shape (out_dim, in_dim).
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    /// He-normal weights (`N(0, 2 / fan_in)`), zero biases.
    pub fn he_normal<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let weights = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
        Self {
            in_dim,
            out_dim,
            activation,
            weights,
            biases: vec![0.0; out_dim],
        }
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config("layer dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim || biases.len() != out_dim {
            return Err(Error::config(format!(
                "layer {in_dim}->{out_dim} got {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::config("non-finite layer parameter"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            biases,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// Shape-checked forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim {
            return Err(Error::config(format!(
                "layer expects {} inputs, got {}",
                self.in_dim,
                input.len()
            )));
        }
        let mut z = vec![0.0; self.out_dim];
        self.affine_into(input, &mut z);
        Ok(z.into_iter().map(|v| self.activation.apply(v)).collect())
    }

    #[inline]
    fn affine_into(&self, input: &[f64], z: &mut [f64]) {
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            *zo = self.biases[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    fn param(&self, idx: usize) -> f64 {
        if idx < self.weights.len() {
            self.weights[idx]
        } else {
            self.biases[idx - self.weights.len()]
        }
    }

    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        if idx < self.weights.len() {
            &mut self.weights[idx]
        } else {
            let n = self.weights.len();
            &mut self.biases[idx - n]
        }
    }
}

/// Per-layer gradient (or moment) buffers, same shapes as the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            biases: vec![0.0; layer.biases.len()],
        }
    }
}

/// Gradients for every layer of a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net.layers.iter().map(LayerGrad::zeros_like).collect(),
        }
    }

    pub fn clear(&mut self) {
        for g in &mut self.layers {
            g.weights.fill(0.0);
            g.biases.fill(0.0);
        }
    }

    /// Flattened in the same order as [`Network::param`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(&g.biases).copied())
            .collect()
    }

    fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|g| g.weights.iter().chain(&g.biases).any(|v| !v.is_finite()))
    }
}

/// Cached activations of one forward pass, reused across samples.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    back: Vec<f64>,
}

impl Trace {
    pub fn new(net: &Network) -> Self {
        let mut acts = vec![vec![0.0; net.input_dim()]];
        acts.extend(net.layers.iter().map(|l| vec![0.0; l.out_dim]));
        Self {
            acts,
            pre: net.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            delta: Vec::new(),
            back: Vec::new(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an input slot")
    }
}

/// A feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::config(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// He-normal stack through `dims` (`dims[0]` is the input width). Every
    /// layer but the last uses `hidden`; the last uses `output`.
    pub fn he_normal<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config(format!("invalid layer widths {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::he_normal(w[0], w[1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Parameter by flat index (layer by layer, weights then biases).
    pub fn param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.param_count() {
                return l.param(idx);
            }
            idx -= l.param_count();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            if idx < l.param_count() {
                *l.param_mut(idx) = value;
                return;
            }
            idx -= l.param_count();
        }
        panic!("parameter index out of range");
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cur = self.layers[0].forward(input)?;
        for l in &self.layers[1..] {
            cur = l.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Forward pass recording activations into `trace`.
    ///
    /// Panics if `input` has the wrong length; callers validate shapes first.
    pub fn forward_trace(&self, input: &[f64], trace: &mut Trace) {
        assert_eq!(input.len(), self.input_dim(), "input width");
        trace.acts[0].copy_from_slice(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = trace.acts.split_at_mut(i + 1);
            let z = &mut trace.pre[i];
            layer.affine_into(&head[i], z);
            for (y, &zv) in tail[0].iter_mut().zip(z.iter()) {
                *y = layer.activation.apply(zv);
            }
        }
    }

    /// Back-propagates `grad_output` (dL/d output) through the pass stored in
    /// `trace`, accumulating parameter gradients into `grads`. Returns
    /// dL/d input.
    pub fn backward(&self, trace: &mut Trace, grad_output: &[f64], grads: &mut Gradients) -> Vec<f64> {
        trace.back.clear();
        trace.back.extend_from_slice(grad_output);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[i];
            let y = &trace.acts[i + 1];
            let input = &trace.acts[i];
            trace.delta.clear();
            trace.delta.extend(
                trace
                    .back
                    .iter()
                    .zip(z.iter().zip(y))
                    .map(|(g, (&zv, &yv))| g * layer.activation.derivative(zv, yv)),
            );
            let g = &mut grads.layers[i];
            for (o, &d) in trace.delta.iter().enumerate() {
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            trace.back.clear();
            trace.back.resize(layer.in_dim, 0.0);
            for (o, &d) in trace.delta.iter().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (b, w) in trace.back.iter_mut().zip(row) {
                    *b += d * w;
                }
            }
        }
        trace.back.clone()
    }

    /// Applies one optimizer step with the given gradients.
    pub fn apply_gradients(&mut self, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
        if let Some(i) = grads.first_non_finite_layer() {
            return Err(Error::Training {
                layer: format!("layer {i}"),
                detail: "non-finite gradient".into(),
            });
        }
        opt.step(&mut self.layers, grads)?;
        Ok(())
    }
}

/// Runs backward over a batch of cached passes and applies one optimizer step.
pub fn backward_and_step(
    net: &mut Network,
    traces: &mut [Trace],
    loss_gradients: &[Vec<f64>],
    opt: &mut OptimizerState,
) -> Result<()> {
    if traces.len() != loss_gradients.len() {
        return Err(Error::config("one loss gradient per cached pass required"));
    }
    let mut grads = Gradients::zeros_like(net);
    for (trace, g) in traces.iter_mut().zip(loss_gradients) {
        net.backward(trace, g, &mut grads);
    }
    net.apply_gradients(&grads, opt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent.
    Sgd,
}

/// Optimizer hyperparameters and moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<LayerGrad>,
    second: Vec<LayerGrad>,
}

impl OptimizerState {
    pub fn adam(net: &Network, learning_rate: f64) -> Self {
        Self::new(net, OptimizerKind::Adam, learning_rate)
    }

    pub fn sgd(net: &Network, learning_rate: f64) -> Self {
        Self::new(net, OptimizerKind::Sgd, learning_rate)
    }

    pub fn new(net: &Network, kind: OptimizerKind, learning_rate: f64) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment accumulators (first, second), shaped like the network.
    pub fn moments(&self) -> (&[LayerGrad], &[LayerGrad]) {
        (&self.first, &self.second)
    }

    fn step(&mut self, layers: &mut [DenseLayer], grads: &Gradients) -> Result<()> {
        if grads.layers.len() != layers.len() || self.first.len() != layers.len() {
            return Err(Error::Internal("optimizer state does not match network".into()));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, g) in layers.iter_mut().zip(&grads.layers) {
                    for (p, d) in layer.weights.iter_mut().zip(&g.weights) {
                        *p -= lr * d;
                    }
                    for (p, d) in layer.biases.iter_mut().zip(&g.biases) {
                        *p -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                };
                for (i, layer) in layers.iter_mut().enumerate() {
                    let g = &grads.layers[i];
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
                    update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
                }
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.iter().chain(&layer.biases).any(|v| !v.is_finite()) {
                return Err(Error::Training {
                    layer: format!("layer {i}"),
                    detail: "parameter became non-finite after update".into(),
                });
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &h) in out.iter_mut().zip(logits) {
        *o = (h - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn check_batch_shapes(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::config(format!("batch sizes differ: {} vs {}", a.len(), b.len())));
    }
    for (j, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != y.len() {
            return Err(Error::config(format!(
                "row {j}: widths differ ({} vs {})",
                x.len(),
                y.len()
            )));
        }
    }
    Ok(())
}

/// Which reconstruction loss the autoencoder branch optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReconLoss {
    /// `(1 / 2B) * sum of squared differences`.
    #[default]
    SquaredError,
    /// Summed binary cross-entropy; inputs must lie in `[0, 1]`.
    BinaryCrossEntropy,
}

impl ReconLoss {
    /// Batch loss under this variant.
    pub fn batch(self, x: &[Vec<f64>], xhat: &[Vec<f64>]) -> Result<f64> {
        match self {
            ReconLoss::SquaredError => mse_recon_loss(x, xhat),
            ReconLoss::BinaryCrossEntropy => bce_recon_loss(x, xhat),
        }
    }

    /// Single-instance loss (the batch formula with `B = 1`).
    pub fn instance(self, x: &[f64], xhat: &[f64]) -> Result<f64> {
        match self {
            ReconLoss::SquaredError => Ok(0.5 * squared_error(x, xhat)),
            ReconLoss::BinaryCrossEntropy => bce_row(x, xhat),
        }
    }

    /// Adds `scale * dL/dxhat` for one row of a batch of size `batch`.
    pub(crate) fn add_row_gradient(self, x: &[f64], xhat: &[f64], batch: usize, scale: f64, out: &mut [f64]) {
        match self {
            ReconLoss::SquaredError => {
                let c = scale / batch as f64;
                for ((o, &xv), &hv) in out.iter_mut().zip(x).zip(xhat) {
                    *o += c * (hv - xv);
                }
            }
            ReconLoss::BinaryCrossEntropy => {
                for ((o, &xv), &hv) in out.iter_mut().zip(x).zip(xhat) {
                    if hv > CLIP_EPS && hv < 1.0 - CLIP_EPS {
                        *o += scale * (-xv / hv + (1.0 - xv) / (1.0 - hv));
                    }
                }
            }
        }
    }
}

fn squared_error(x: &[f64], xhat: &[f64]) -> f64 {
    x.iter().zip(xhat).map(|(a, b)| (b - a) * (b - a)).sum()
}

fn bce_row(x: &[f64], xhat: &[f64]) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::config("reconstruction width differs from input width"));
    }
    let mut loss = 0.0;
    for (&xv, &hv) in x.iter().zip(xhat) {
        if !(0.0..=1.0).contains(&xv) {
            return Err(Error::InputDomain(format!(
                "binary cross-entropy target {xv} is outside [0, 1]"
            )));
        }
        let h = hv.clamp(CLIP_EPS, 1.0 - CLIP_EPS);
        loss -= xv * h.ln() + (1.0 - xv) * (1.0 - h).ln();
    }
    Ok(loss)
}

/// Summed binary cross-entropy over all rows and features.
pub fn bce_recon_loss(batch_x: &[Vec<f64>], batch_xhat: &[Vec<f64>]) -> Result<f64> {
    check_batch_shapes(batch_x, batch_xhat)?;
    batch_x.iter().zip(batch_xhat).map(|(x, h)| bce_row(x, h)).sum()
}

/// `(1 / 2B) * sum_j sum_i (xhat - x)^2`.
pub fn mse_recon_loss(batch_x: &[Vec<f64>], batch_xhat: &[Vec<f64>]) -> Result<f64> {
    check_batch_shapes(batch_x, batch_xhat)?;
    if batch_x.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = batch_x.iter().zip(batch_xhat).map(|(x, h)| squared_error(x, h)).sum();
    Ok(total / (2.0 * batch_x.len() as f64))
}

/// Mean categorical cross-entropy over the batch.
pub fn ce_clf_loss(targets: &[Vec<f64>], predictions: &[Vec<f64>]) -> Result<f64> {
    check_batch_shapes(targets, predictions)?;
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (j, (y, p)) in targets.iter().zip(predictions).enumerate() {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Internal(format!(
                "prediction row {j} sums to {sum}, not 1"
            )));
        }
        total -= y
            .iter()
            .zip(p)
            .map(|(&yv, &pv)| yv * pv.clamp(CLIP_EPS, 1.0 - CLIP_EPS).ln())
            .sum::<f64>();
    }
    Ok(total / targets.len() as f64)
}
