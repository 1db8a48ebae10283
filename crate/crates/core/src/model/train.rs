use serde::{Deserialize, Serialize};

use super::{relu_in_place, Dense, ModelParams};
use crate::error::{Error, Result};
use crate::numkernel::{argmax_low_tie, axpy, cross_entropy, softmax, Matrix, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Stop once epoch-end training accuracy reaches this fraction.
    pub train_acc_stop: f64,
    pub max_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            train_acc_stop: 0.99,
            max_epochs: 1000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Defaults used for tabular data (lower learning rate).
    pub fn tabular() -> Self {
        Self { learning_rate: 1e-4, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.train_acc_stop > 0.0 && self.train_acc_stop <= 1.0) {
            return bad("train_acc_stop must lie in (0, 1]");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_accuracy: f64,
    /// Mean mini-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

struct Moments {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

struct Adam {
    moments: Vec<Moments>,
    step: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let moments = params
            .layers()
            .map(|l| Moments {
                m_w: vec![0.0; l.weights.as_slice().len()],
                v_w: vec![0.0; l.weights.as_slice().len()],
                m_b: vec![0.0; l.bias.len()],
                v_b: vec![0.0; l.bias.len()],
            })
            .collect();
        Self { moments, step: 0 }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &[Dense], cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = cfg.learning_rate;
        let eps = cfg.adam_eps;
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for ((layer, grad), mom) in params.layers_mut().zip(grads).zip(&mut self.moments) {
            apply(layer.weights.as_mut_slice(), grad.weights.as_slice(), &mut mom.m_w, &mut mom.v_w);
            apply(&mut layer.bias, &grad.bias, &mut mom.m_b, &mut mom.v_b);
        }
    }
}

/// Mean cross-entropy of a mini-batch and its gradient for every layer.
fn batch_gradients(params: &ModelParams, x: &Matrix, y: &[usize]) -> Result<(f64, Vec<Dense>)> {
    let layers: Vec<&Dense> = params.layers().collect();
    let last = layers.len() - 1;
    // activations[l] is the input of layer l; the final entry holds logits
    let mut activations: Vec<Matrix> = Vec::with_capacity(layers.len() + 1);
    activations.push(x.clone());
    for (l, layer) in layers.iter().enumerate() {
        let mut h = layer.apply_batch(&activations[l]);
        if l < last {
            relu_in_place(h.as_mut_slice());
        }
        activations.push(h);
    }

    let n = x.rows() as f64;
    let mut delta = activations.pop().expect("logits present");
    let mut loss = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let p = softmax(delta.row(i))?;
        loss += cross_entropy(&p, label)?;
        let row = delta.row_mut(i);
        row.copy_from_slice(&p);
        row[label] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n);
    }

    let mut grads: Vec<Dense> = Vec::with_capacity(layers.len());
    for l in (0..layers.len()).rev() {
        let input = &activations[l];
        let dw = delta.matmul_tn(input)?;
        let mut db = vec![0.0; delta.cols()];
        for r in delta.iter_rows() {
            axpy(1.0, r, &mut db);
        }
        if l > 0 {
            let mut upstream = delta.matmul(&layers[l].weights)?;
            for (g, &a) in upstream.as_mut_slice().iter_mut().zip(input.as_slice()) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = upstream;
        }
        grads.push(Dense { weights: dw, bias: db });
    }
    grads.reverse();
    Ok((loss / n, grads))
}

pub(super) fn train(
    start: &ModelParams,
    inputs: &Matrix,
    labels: &[usize],
    config: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if inputs.rows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if inputs.rows() != labels.len() {
        return Err(Error::InvalidDimension(format!(
            "{} inputs but {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    let k = start.spec().num_classes;
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidLabel { label: bad, num_classes: k });
    }

    let mut params = start.clone();
    let mut adam = Adam::new(&params);
    let mut order: Vec<usize> = (0..inputs.rows()).collect();
    let mut report = TrainReport { epochs_run: 0, train_accuracy: 0.0, epoch_losses: Vec::new() };

    for _ in 0..config.max_epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        // the final short batch is used as-is
        for chunk in order.chunks(config.batch_size) {
            let x = inputs.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = batch_gradients(&params, &x, &y)?;
            if !loss.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "training diverged (non-finite loss) at epoch {}",
                    report.epochs_run + 1
                )));
            }
            adam.update(&mut params, &grads, config);
            epoch_loss += loss;
            batches += 1;
        }
        report.epochs_run += 1;
        report.epoch_losses.push(epoch_loss / batches as f64);
        report.train_accuracy = training_accuracy(&params, inputs, labels)?;
        if report.train_accuracy >= config.train_acc_stop {
            break;
        }
    }
    if !params.is_finite() {
        return Err(Error::InvalidConfig("training produced non-finite parameters".into()));
    }
    Ok((params, report))
}

fn training_accuracy(params: &ModelParams, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
    let logits = params.classify_batch(&params.encode_batch(inputs)?)?;
    let mut hits = 0usize;
    for (row, &y) in logits.iter_rows().zip(labels) {
        if argmax_low_tie(row)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}
