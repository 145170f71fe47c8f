//! The joint model: an encoder shared by a decoder (reconstruction branch) and
//! an MLP classifier head, trained under
//! `alpha * L_recon + (1 - alpha) * L_clf`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    ce_clf_loss, softmax_into, Activation, Gradients, Network, OptimizerKind, OptimizerState,
    ReconLoss, Trace,
};
use crate::{Error, Result};

/// Architecture and training hyperparameters of a [`UnifiedModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub encoder_hidden: Vec<usize>,
    /// Bottleneck width, which is also the classifier input width.
    pub embedding_dim: usize,
    pub head_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub embedding_activation: Activation,
    pub decoder_output: Activation,
    pub recon_loss: ReconLoss,
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl ModelConfig {
    /// Defaults for a dataset of width `input_dim` with the small synthetic
    /// architecture (AE hidden 8, bottleneck 2, MLP hidden 2).
    pub fn small(input_dim: usize) -> Self {
        Self {
            input_dim,
            encoder_hidden: vec![8],
            embedding_dim: 2,
            head_hidden: vec![2],
            hidden_activation: Activation::LeakyRelu,
            embedding_activation: Activation::LeakyRelu,
            decoder_output: Activation::Sigmoid,
            recon_loss: ReconLoss::SquaredError,
            alpha: 0.2,
            learning_rate: 0.001,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
        }
    }

    /// Architecture preset for the named dataset, if it has one.
    pub fn preset(dataset: &str, input_dim: usize) -> Option<Self> {
        let (enc, emb, head): (&[usize], usize, &[usize]) = match dataset {
            "sea" | "vib" | "blob" | "shuttle" => (&[8], 2, &[2]),
            "wdn" => (&[2], 2, &[2]),
            "mnist" => (&[512, 256, 64, 32], 20, &[16, 8]),
            "kdd99" => (&[64], 20, &[16, 8]),
            "forest" | "sensorless" => (&[32], 20, &[16, 8]),
            _ => return None,
        };
        Some(Self {
            encoder_hidden: enc.to_vec(),
            embedding_dim: emb,
            head_hidden: head.to_vec(),
            ..Self::small(input_dim)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::config("input and embedding widths must be positive"));
        }
        if self.encoder_hidden.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }

    fn encoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.encoder_hidden);
        d.push(self.embedding_dim);
        d
    }

    fn decoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.embedding_dim];
        d.extend(self.encoder_hidden.iter().rev());
        d.push(self.input_dim);
        d
    }

    fn head_dims(&self, classes: usize) -> Vec<usize> {
        let mut d = vec![self.embedding_dim];
        d.extend(&self.head_hidden);
        d.push(classes);
        d
    }
}

/// Output of [`UnifiedModel::predict`] for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Argmax class, lowest index on ties.
    pub label: usize,
    pub probabilities: Vec<f64>,
    pub recon_loss: f64,
    pub embedding: Vec<f64>,
}

/// Parameter gradients of the three sub-networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
    pub classifier: Gradients,
}

impl ModelGradients {
    /// Flattened as encoder, decoder, classifier (matching [`UnifiedModel::param`]).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.encoder.flatten();
        v.extend(self.decoder.flatten());
        v.extend(self.classifier.flatten());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedModel {
    config: ModelConfig,
    encoder: Network,
    decoder: Network,
    classifier: Network,
    class_count: usize,
    seed: u64,
    enc_opt: OptimizerState,
    dec_opt: OptimizerState,
    clf_opt: OptimizerState,
}

struct Scratch {
    enc: Trace,
    dec: Trace,
    clf: Trace,
    grads: ModelGradients,
    grad_xhat: Vec<f64>,
    grad_logits: Vec<f64>,
    probs: Vec<f64>,
}

impl Scratch {
    fn new(model: &UnifiedModel) -> Self {
        Self {
            enc: Trace::new(&model.encoder),
            dec: Trace::new(&model.decoder),
            clf: Trace::new(&model.classifier),
            grads: ModelGradients {
                encoder: Gradients::zeros_like(&model.encoder),
                decoder: Gradients::zeros_like(&model.decoder),
                classifier: Gradients::zeros_like(&model.classifier),
            },
            grad_xhat: vec![0.0; model.config.input_dim],
            grad_logits: vec![0.0; model.class_count],
            probs: vec![0.0; model.class_count],
        }
    }
}

impl UnifiedModel {
    /// He-normal initialized model for `class_count` classes. `seed` is only
    /// recorded in snapshots; randomness comes from `rng`.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        class_count: usize,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if class_count == 0 {
            return Err(Error::config("class count must be positive"));
        }
        let encoder = Network::he_normal(
            &config.encoder_dims(),
            config.hidden_activation,
            config.embedding_activation,
            rng,
        )?;
        let decoder = Network::he_normal(
            &config.decoder_dims(),
            config.hidden_activation,
            config.decoder_output,
            rng,
        )?;
        let classifier = Network::he_normal(
            &config.head_dims(class_count),
            config.hidden_activation,
            Activation::Identity,
            rng,
        )?;
        Ok(Self::assemble(config, encoder, decoder, classifier, class_count, seed))
    }

    fn assemble(
        config: ModelConfig,
        encoder: Network,
        decoder: Network,
        classifier: Network,
        class_count: usize,
        seed: u64,
    ) -> Self {
        let opt = |n: &Network| OptimizerState::new(n, config.optimizer, config.learning_rate);
        Self {
            enc_opt: opt(&encoder),
            dec_opt: opt(&decoder),
            clf_opt: opt(&classifier),
            config,
            encoder,
            decoder,
            classifier,
            class_count,
            seed,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub fn classifier(&self) -> &Network {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Network {
        &mut self.classifier
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::config(format!(
                "model expects {} features, got {}",
                self.config.input_dim,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.check_input(x)?;
        let embedding = self.encoder.forward(x)?;
        let xhat = self.decoder.forward(&embedding)?;
        let logits = self.classifier.forward(&embedding)?;
        let mut probabilities = vec![0.0; logits.len()];
        softmax_into(&logits, &mut probabilities);
        let label = argmax(&probabilities);
        let recon_loss = self.config.recon_loss.instance(x, &xhat)?;
        Ok(Prediction {
            label,
            probabilities,
            recon_loss,
            embedding,
        })
    }

    /// Per-instance reconstruction loss, identical to `predict(x).recon_loss`.
    pub fn reconstruction_loss(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let embedding = self.encoder.forward(x)?;
        let xhat = self.decoder.forward(&embedding)?;
        self.config.recon_loss.instance(x, &xhat)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.decoder.forward(&self.encoder.forward(x)?)
    }

    /// `alpha * L_recon + (1 - alpha) * L_clf` on a batch with one-hot (or
    /// any probability-vector) targets.
    pub fn total_loss(&self, batch_x: &[Vec<f64>], batch_y: &[Vec<f64>]) -> Result<f64> {
        if batch_x.is_empty() {
            return Err(Error::config("empty batch"));
        }
        if batch_x.len() != batch_y.len() {
            return Err(Error::config("batch_x and batch_y differ in length"));
        }
        let mut xhat = Vec::with_capacity(batch_x.len());
        let mut probs = Vec::with_capacity(batch_x.len());
        for (x, y) in batch_x.iter().zip(batch_y) {
            self.check_input(x)?;
            if y.len() != self.class_count {
                return Err(Error::config("target width differs from class count"));
            }
            let emb = self.encoder.forward(x)?;
            xhat.push(self.decoder.forward(&emb)?);
            let logits = self.classifier.forward(&emb)?;
            let mut p = vec![0.0; logits.len()];
            softmax_into(&logits, &mut p);
            probs.push(p);
        }
        let recon = self.config.recon_loss.batch(batch_x, &xhat)?;
        let clf = ce_clf_loss(batch_y, &probs)?;
        Ok(combine_losses(self.config.alpha, recon, clf))
    }

    /// Total loss and its analytic gradient with respect to every parameter.
    pub fn loss_gradients(
        &self,
        batch_x: &[Vec<f64>],
        batch_y: &[Vec<f64>],
    ) -> Result<(f64, ModelGradients)> {
        let loss = self.total_loss(batch_x, batch_y)?;
        let mut scratch = Scratch::new(self);
        let xs: Vec<&[f64]> = batch_x.iter().map(Vec::as_slice).collect();
        let ys: Vec<&[f64]> = batch_y.iter().map(Vec::as_slice).collect();
        self.accumulate(&xs, &ys, &mut scratch);
        Ok((loss, scratch.grads))
    }

    /// Adds the batch gradient into `scratch.grads` and returns the batch loss.
    fn accumulate(&self, xs: &[&[f64]], ys: &[&[f64]], s: &mut Scratch) -> f64 {
        let b = xs.len();
        let alpha = self.config.alpha;
        let recon = self.config.recon_loss;
        let (mut recon_total, mut clf_total) = (0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            self.encoder.forward_trace(x, &mut s.enc);
            let emb = s.enc.output();
            self.decoder.forward_trace(emb, &mut s.dec);
            self.classifier.forward_trace(emb, &mut s.clf);
            let xhat = s.dec.output();
            recon_total += recon.instance(x, xhat).unwrap_or(f64::NAN);
            softmax_into(s.clf.output(), &mut s.probs);
            clf_total -= y
                .iter()
                .zip(&s.probs)
                .map(|(&yv, &pv)| yv * pv.clamp(crate::nn::CLIP_EPS, 1.0 - crate::nn::CLIP_EPS).ln())
                .sum::<f64>();

            s.grad_xhat.fill(0.0);
            recon.add_row_gradient(x, xhat, b, alpha, &mut s.grad_xhat);
            let clf_scale = (1.0 - alpha) / b as f64;
            for ((g, &p), &yv) in s.grad_logits.iter_mut().zip(&s.probs).zip(y.iter()) {
                *g = clf_scale * (p - yv);
            }
            let mut g_emb = self.decoder.backward(&mut s.dec, &s.grad_xhat, &mut s.grads.decoder);
            let g_clf = self.classifier.backward(&mut s.clf, &s.grad_logits, &mut s.grads.classifier);
            for (a, c) in g_emb.iter_mut().zip(&g_clf) {
                *a += c;
            }
            self.encoder.backward(&mut s.enc, &g_emb, &mut s.grads.encoder);
        }
        let recon_loss = match recon {
            ReconLoss::SquaredError => recon_total / b as f64,
            ReconLoss::BinaryCrossEntropy => recon_total,
        };
        combine_losses(alpha, recon_loss, clf_total / b as f64)
    }

    fn apply(&mut self, grads: &ModelGradients) -> Result<()> {
        let tag = |name: &str| {
            let name = name.to_string();
            move |e: Error| match e {
                Error::Training { layer, detail } => Error::Training {
                    layer: format!("{name} {layer}"),
                    detail,
                },
                other => other,
            }
        };
        self.encoder
            .apply_gradients(&grads.encoder, &mut self.enc_opt)
            .map_err(tag("encoder"))?;
        self.decoder
            .apply_gradients(&grads.decoder, &mut self.dec_opt)
            .map_err(tag("decoder"))?;
        self.classifier
            .apply_gradients(&grads.classifier, &mut self.clf_opt)
            .map_err(tag("classifier"))
    }

    /// Runs `epochs` shuffled mini-batch passes of joint-loss descent over
    /// `data` (features, class label). Returns the mean batch loss of each
    /// epoch.
    pub fn train_session<R: Rng + ?Sized>(
        &mut self,
        data: &[(Vec<f64>, usize)],
        epochs: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if data.is_empty() {
            log::warn!("training session skipped: empty dataset");
            return Ok(Vec::new());
        }
        for (x, y) in data {
            self.check_input(x)?;
            if *y >= self.class_count {
                return Err(Error::config(format!(
                    "label {y} outside 0..{}",
                    self.class_count
                )));
            }
            if self.config.recon_loss == ReconLoss::BinaryCrossEntropy
                && x.iter().any(|v| !(0.0..=1.0).contains(v))
            {
                return Err(Error::InputDomain(
                    "binary cross-entropy needs features in [0, 1]".into(),
                ));
            }
        }
        let mut scratch = Scratch::new(self);
        let one_hot: Vec<Vec<f64>> = (0..self.class_count)
            .map(|c| (0..self.class_count).map(|i| f64::from(u8::from(i == c))).collect())
            .collect();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut trace = Vec::with_capacity(epochs);
        let mut xs: Vec<&[f64]> = Vec::with_capacity(self.config.batch_size);
        let mut ys: Vec<&[f64]> = Vec::with_capacity(self.config.batch_size);
        for _ in 0..epochs {
            order.shuffle(rng);
            let (mut sum, mut batches) = (0.0, 0usize);
            for chunk in order.chunks(self.config.batch_size) {
                xs.clear();
                ys.clear();
                for &i in chunk {
                    xs.push(&data[i].0);
                    ys.push(&one_hot[data[i].1]);
                }
                scratch.grads.encoder.clear();
                scratch.grads.decoder.clear();
                scratch.grads.classifier.clear();
                let loss = self.accumulate(&xs, &ys, &mut scratch);
                if !loss.is_finite() {
                    return Err(Error::Training {
                        layer: "model".into(),
                        detail: format!("non-finite batch loss {loss}"),
                    });
                }
                self.apply(&scratch.grads)?;
                sum += loss;
                batches += 1;
            }
            trace.push(sum / batches as f64);
        }
        Ok(trace)
    }

    /// Replaces the classifier head with a freshly initialized one of width
    /// `new_count`. Encoder and decoder are carried over unchanged.
    pub fn expand_classes<R: Rng + ?Sized>(&mut self, new_count: usize, rng: &mut R) -> Result<()> {
        if new_count <= self.class_count {
            return Err(Error::config(format!(
                "cannot shrink or keep head width: {} -> {new_count}",
                self.class_count
            )));
        }
        self.classifier = Network::he_normal(
            &self.config.head_dims(new_count),
            self.config.hidden_activation,
            Activation::Identity,
            rng,
        )?;
        self.clf_opt =
            OptimizerState::new(&self.classifier, self.config.optimizer, self.config.learning_rate);
        self.class_count = new_count;
        Ok(())
    }

    /// Fraction of `data` whose predicted label matches.
    pub fn accuracy(&self, data: &[(Vec<f64>, usize)]) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0usize;
        for (x, y) in data {
            if self.predict(x)?.label == *y {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count() + self.classifier.param_count()
    }

    /// Flat parameter access in encoder, decoder, classifier order.
    pub fn param(&self, idx: usize) -> f64 {
        let (e, d) = (self.encoder.param_count(), self.decoder.param_count());
        if idx < e {
            self.encoder.param(idx)
        } else if idx < e + d {
            self.decoder.param(idx - e)
        } else {
            self.classifier.param(idx - e - d)
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let (e, d) = (self.encoder.param_count(), self.decoder.param_count());
        if idx < e {
            self.encoder.set_param(idx, value)
        } else if idx < e + d {
            self.decoder.set_param(idx - e, value)
        } else {
            self.classifier.set_param(idx - e - d, value)
        }
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            config: self.config.clone(),
            class_count: self.class_count,
            seed: self.seed,
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            classifier: self.classifier.clone(),
        }
    }

    pub fn from_snapshot(s: ModelSnapshot) -> Result<Self> {
        if s.format != SNAPSHOT_FORMAT {
            return Err(Error::config(format!("unknown snapshot format {:?}", s.format)));
        }
        s.config.validate()?;
        // Re-run the constructors' checks on deserialized layers.
        let rebuild = |n: Network| -> Result<Network> {
            let layers = n
                .layers()
                .iter()
                .map(|l| {
                    crate::nn::DenseLayer::from_parts(
                        l.in_dim(),
                        l.out_dim(),
                        l.weights().to_vec(),
                        l.biases().to_vec(),
                        l.activation(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Network::new(layers)
        };
        let encoder = rebuild(s.encoder)?;
        let decoder = rebuild(s.decoder)?;
        let classifier = rebuild(s.classifier)?;
        let c = &s.config;
        if encoder.input_dim() != c.input_dim
            || encoder.output_dim() != c.embedding_dim
            || decoder.input_dim() != c.embedding_dim
            || decoder.output_dim() != c.input_dim
            || classifier.input_dim() != c.embedding_dim
            || classifier.output_dim() != s.class_count
        {
            return Err(Error::config("snapshot dimensions are inconsistent"));
        }
        Ok(Self::assemble(s.config, encoder, decoder, classifier, s.class_count, s.seed))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.snapshot())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_snapshot(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

const SNAPSHOT_FORMAT: &str = "scil-model/1";

/// Serialized model parameters. JSON floats round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub format: String,
    pub config: ModelConfig,
    pub class_count: usize,
    pub seed: u64,
    pub encoder: Network,
    pub decoder: Network,
    pub classifier: Network,
}

/// `alpha * recon + (1 - alpha) * clf`.
pub fn combine_losses(alpha: f64, recon: f64, clf: f64) -> f64 {
    alpha * recon + (1.0 - alpha) * clf
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate().skip(1) {
        if p > v[best] {
            best = i;
        }
    }
    best
}
