//! Encoder + classifier MLP with hand-written backpropagation.
//!
//! The encoder `f_e` is a stack of ReLU layers; its last width is the
//! embedding dimension `D`. The classifier head `f_c` is `classifier_depth`
//! linear layers (ReLU between them, none on the logits). Acquisition code
//! only ever needs the head's gradient with respect to the embedding, which
//! [`ModelParams::grad_loss_wrt_embedding`] provides analytically.

mod checkpoint;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use train::{TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{argmax_low_tie, axpy, cross_entropy, softmax, Matrix, RngStream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    /// Encoder widths; the last one is the embedding dimension.
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default = "default_classifier_depth")]
    pub classifier_depth: usize,
}

fn default_classifier_depth() -> usize {
    1
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        Self { input_dim, hidden_dims, num_classes, classifier_depth: 1 }
    }

    pub fn with_classifier_depth(mut self, depth: usize) -> Self {
        self.classifier_depth = depth;
        self
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.num_classes == 0
            || self.classifier_depth == 0
            || self.hidden_dims.is_empty()
            || self.hidden_dims.contains(&0)
        {
            return Err(Error::InvalidConfig(format!("invalid network shape {self:?}")));
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` of every layer, encoder first.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        let d = self.embedding_dim();
        for _ in 1..self.classifier_depth {
            shapes.push((d, d));
        }
        shapes.push((self.num_classes, d));
        shapes
    }
}

/// One affine layer `W x + b` with `W` stored as `fan_out × fan_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::InvalidDimension(format!(
                "layer with {} outputs but {} biases",
                weights.rows(),
                bias.len()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.weights.matvec(x).expect("layer input width checked by caller");
        axpy(1.0, &self.bias, &mut out);
        out
    }

    fn apply_batch(&self, x: &Matrix) -> Matrix {
        let mut out = x.matmul_nt(&self.weights).expect("layer input width checked by caller");
        for i in 0..out.rows() {
            axpy(1.0, &self.bias, out.row_mut(i));
        }
        out
    }
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: MlpSpec,
    encoder: Vec<Dense>,
    classifier: Vec<Dense>,
}

impl ModelParams {
    /// Fan-in scaled uniform init on `[-1/√fan_in, 1/√fan_in]`, zero biases.
    pub fn init(spec: &MlpSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let layers: Vec<Dense> = spec
            .layer_shapes()
            .into_iter()
            .map(|(out, fan_in)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = (0..out * fan_in).map(|_| rng.uniform_range(-bound, bound)).collect();
                Dense {
                    weights: Matrix::new(out, fan_in, w).expect("shape computed above"),
                    bias: vec![0.0; out],
                }
            })
            .collect();
        Self::from_layers(spec.clone(), layers)
    }

    /// Build from explicit layers (encoder first, then classifier).
    pub fn from_layers(spec: MlpSpec, mut layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::InvalidDimension(format!(
                "spec needs {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, (layer, &(out, fan_in))) in layers.iter().zip(&shapes).enumerate() {
            if layer.fan_out() != out || layer.fan_in() != fan_in || layer.bias.len() != out {
                return Err(Error::InvalidDimension(format!(
                    "layer {i} is {}x{}, spec needs {out}x{fan_in}",
                    layer.fan_out(),
                    layer.fan_in()
                )));
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidConfig(format!("layer {i} has non-finite parameters")));
            }
        }
        let classifier = layers.split_off(spec.hidden_dims.len());
        Ok(Self { spec, encoder: layers, classifier })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn encoder(&self) -> &[Dense] {
        &self.encoder
    }

    pub fn classifier(&self) -> &[Dense] {
        &self.classifier
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.iter().chain(&self.classifier)
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder.iter_mut().chain(self.classifier.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    fn check_len(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(Error::InvalidDimension(format!("{what}: expected length {want}, got {got}")));
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.spec.num_classes {
            return Err(Error::InvalidLabel { label: y, num_classes: self.spec.num_classes });
        }
        Ok(())
    }

    /// `z = f_e(x)`.
    pub fn forward_encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len(), self.spec.input_dim, "encoder input")?;
        let mut h = x.to_vec();
        for layer in &self.encoder {
            h = layer.apply(&h);
            relu_in_place(&mut h);
        }
        Ok(h)
    }

    /// Logits `f_c(z)`.
    pub fn forward_classify(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z.len(), self.spec.embedding_dim(), "classifier input")?;
        let mut h = z.to_vec();
        let last = self.classifier.len() - 1;
        for (i, layer) in self.classifier.iter().enumerate() {
            h = layer.apply(&h);
            if i < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    /// Input to the final (logit) layer: `z` itself for a single-layer head.
    pub fn last_layer_input(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z.len(), self.spec.embedding_dim(), "classifier input")?;
        let mut h = z.to_vec();
        for layer in &self.classifier[..self.classifier.len() - 1] {
            h = layer.apply(&h);
            relu_in_place(&mut h);
        }
        Ok(h)
    }

    pub fn pseudo_label(&self, z: &[f64]) -> Result<usize> {
        argmax_low_tie(&self.forward_classify(z)?)
    }

    pub fn probs(&self, z: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.forward_classify(z)?)
    }

    /// Row-wise embeddings of a batch of inputs.
    pub fn encode_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_len(inputs.cols(), self.spec.input_dim, "encoder input")?;
        let mut h = inputs.clone();
        for layer in &self.encoder {
            h = layer.apply_batch(&h);
            relu_in_place(h.as_mut_slice());
        }
        Ok(h)
    }

    /// Row-wise logits of a batch of embeddings.
    pub fn classify_batch(&self, embeddings: &Matrix) -> Result<Matrix> {
        self.check_len(embeddings.cols(), self.spec.embedding_dim(), "classifier input")?;
        let mut h = embeddings.clone();
        let last = self.classifier.len() - 1;
        for (i, layer) in self.classifier.iter().enumerate() {
            h = layer.apply_batch(&h);
            if i < last {
                relu_in_place(h.as_mut_slice());
            }
        }
        Ok(h)
    }

    /// Row-wise class probabilities of a batch of embeddings.
    pub fn probs_batch(&self, embeddings: &Matrix) -> Result<Matrix> {
        let mut logits = self.classify_batch(embeddings)?;
        for i in 0..logits.rows() {
            let p = softmax(logits.row(i))?;
            logits.row_mut(i).copy_from_slice(&p);
        }
        Ok(logits)
    }

    /// Cross-entropy of the head at `z` for label `y`, and its gradient with
    /// respect to `z` (backpropagated through the classifier head only).
    pub fn loss_and_grad_wrt_embedding(&self, z: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
        self.check_len(z.len(), self.spec.embedding_dim(), "classifier input")?;
        self.check_label(y)?;
        // post-activation inputs to every head layer
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.classifier.len());
        let mut h = z.to_vec();
        let last = self.classifier.len() - 1;
        for (i, layer) in self.classifier.iter().enumerate() {
            let next = layer.apply(&h);
            inputs.push(std::mem::replace(&mut h, next));
            if i < last {
                relu_in_place(&mut h);
            }
        }
        let probs = softmax(&h)?;
        let loss = cross_entropy(&probs, y)?;
        let mut delta = probs;
        delta[y] -= 1.0;
        for (i, layer) in self.classifier.iter().enumerate().rev() {
            let mut upstream = layer.weights.matvec_t(&delta)?;
            if i > 0 {
                // the input to layer i is a ReLU output of layer i-1
                for (g, &a) in upstream.iter_mut().zip(&inputs[i]) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = upstream;
        }
        Ok((loss, delta))
    }

    /// `∇_z ℓ(f_c(z), y)`; for a single linear head this is `Wᵀ(p − e_y)`.
    pub fn grad_loss_wrt_embedding(&self, z: &[f64], y: usize) -> Result<Vec<f64>> {
        self.loss_and_grad_wrt_embedding(z, y).map(|(_, g)| g)
    }

    /// `T` stochastic predictions with inverted dropout on the embedding.
    pub fn mc_dropout_predict(
        &self,
        x: &[f64],
        passes: usize,
        dropout_rate: f64,
        rng: &mut RngStream,
    ) -> Result<Vec<Vec<f64>>> {
        check_dropout(passes, dropout_rate)?;
        let z = self.forward_encode(x)?;
        (0..passes).map(|_| self.probs(&dropout_mask(&z, dropout_rate, rng))).collect()
    }

    /// Fraction of rows whose argmax logit equals the label.
    pub fn eval_accuracy(&self, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
        if inputs.rows() == 0 {
            return Err(Error::EmptyTestSet);
        }
        if inputs.rows() != labels.len() {
            return Err(Error::InvalidDimension(format!(
                "{} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        let logits = self.classify_batch(&self.encode_batch(inputs)?)?;
        let mut correct = 0usize;
        for (row, &y) in logits.iter_rows().zip(labels) {
            if argmax_low_tie(row)? == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Adam training on a labelled set; see [`TrainConfig`].
    pub fn train(
        &self,
        inputs: &Matrix,
        labels: &[usize],
        config: &TrainConfig,
        rng: &mut RngStream,
    ) -> Result<ModelParams> {
        train::train(self, inputs, labels, config, rng).map(|(p, _)| p)
    }

    pub fn train_with_report(
        &self,
        inputs: &Matrix,
        labels: &[usize],
        config: &TrainConfig,
        rng: &mut RngStream,
    ) -> Result<(ModelParams, TrainReport)> {
        train::train(self, inputs, labels, config, rng)
    }
}

pub(crate) fn check_dropout(passes: usize, rate: f64) -> Result<()> {
    if passes == 0 {
        return Err(Error::InvalidConfig("dropout passes must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

pub(crate) fn dropout_mask(z: &[f64], rate: f64, rng: &mut RngStream) -> Vec<f64> {
    if rate == 0.0 {
        return z.to_vec();
    }
    let scale = 1.0 / (1.0 - rate);
    z.iter().map(|&v| if rng.bernoulli(rate) { 0.0 } else { v * scale }).collect()
}

/// Frozen model used for one acquisition round.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    params: ModelParams,
}

impl ModelSnapshot {
    pub fn new(params: ModelParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn spec(&self) -> &MlpSpec {
        self.params.spec()
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}

impl std::ops::Deref for ModelSnapshot {
    type Target = ModelParams;

    fn deref(&self) -> &ModelParams {
        &self.params
    }
}
