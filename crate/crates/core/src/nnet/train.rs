use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{argmax_rows, cross_entropy, Mode, Network};
use crate::contexts::derive_seed;
use crate::dataset::{NormStats, SeriesDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Multiplier applied to the learning rate on a plateau.
    pub lr_decay: f64,
    pub lr_patience: usize,
    pub stop_patience: usize,
    /// Smallest validation-loss decrease that counts as an improvement.
    pub min_delta: f64,
    pub max_epochs: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            batch_size: 64,
            lr_decay: 0.9,
            lr_patience: 10,
            stop_patience: 20,
            min_delta: 1e-4,
            max_epochs: 300,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("invalid training config: {msg}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad("lr_decay must lie in (0, 1)");
        }
        if self.lr_patience == 0 || self.stop_patience == 0 {
            return bad("patiences must be >= 1");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be >= 0");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

/// What the schedule decided after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlateauStep {
    pub improved: bool,
    pub lr_reduced: bool,
    pub stop: bool,
}

/// Validation-loss plateau tracking: decays the learning rate after
/// `lr_patience` stagnant epochs and stops after `stop_patience`.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub best: f64,
    decay: f64,
    lr_patience: usize,
    stop_patience: usize,
    min_delta: f64,
    lr_wait: usize,
    stop_wait: usize,
}

impl PlateauSchedule {
    pub fn new(config: &TrainConfig) -> Self {
        PlateauSchedule {
            lr: config.learning_rate,
            best: f64::INFINITY,
            decay: config.lr_decay,
            lr_patience: config.lr_patience,
            stop_patience: config.stop_patience,
            min_delta: config.min_delta,
            lr_wait: 0,
            stop_wait: 0,
        }
    }

    pub fn step(&mut self, val_loss: f64) -> PlateauStep {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.lr_wait = 0;
            self.stop_wait = 0;
            return PlateauStep {
                improved: true,
                lr_reduced: false,
                stop: false,
            };
        }
        self.lr_wait += 1;
        self.stop_wait += 1;
        let lr_reduced = self.lr_wait >= self.lr_patience;
        if lr_reduced {
            self.lr *= self.decay;
            self.lr_wait = 0;
        }
        PlateauStep {
            improved: false,
            lr_reduced,
            stop: self.stop_wait >= self.stop_patience,
        }
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
    t: i32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(params: &[Array2<f32>], config: &TrainConfig) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }

    pub fn update(&mut self, params: &mut [Array2<f32>], grads: &[Array2<f32>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.epsilon * c2.sqrt()) as f32;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

/// Copies the selected windows into a `(b, l, f)` tensor.
pub fn batch_tensor(ds: &SeriesDataset, indices: &[usize]) -> Array3<f32> {
    let per = ds.l * ds.f;
    let mut data = Vec::with_capacity(indices.len() * per);
    for &i in indices {
        data.extend_from_slice(ds.window(i));
    }
    Array3::from_shape_vec((indices.len(), ds.l, ds.f), data).expect("window size")
}

const EVAL_CHUNK: usize = 512;

/// A trained network with the normalization it expects and its history.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub name: String,
    pub network: Network<f32>,
    pub stats: Option<NormStats>,
    pub history: Vec<EpochRecord>,
}

impl ClassifierModel {
    fn check_dataset(&self, ds: &SeriesDataset) -> Result<()> {
        check_compatible(&self.network, ds)
    }

    /// Labels (argmax, ties to the lowest index) and probability rows.
    /// Probabilities are normalized in 64-bit.
    pub fn predict(&self, ds: &SeriesDataset) -> Result<(Vec<u32>, Array2<f64>)> {
        self.check_dataset(ds)?;
        let k = self.network.spec().classes();
        let mut probs = Array2::<f64>::zeros((ds.len(), k));
        let all: Vec<usize> = (0..ds.len()).collect();
        for (c, chunk) in all.chunks(EVAL_CHUNK).enumerate() {
            let x = batch_tensor(ds, chunk);
            let logits = self.network.logits(x.view(), Mode::Eval)?;
            let p = super::softmax(logits.mapv(f64::from));
            let start = c * EVAL_CHUNK;
            probs
                .slice_mut(ndarray::s![start..start + chunk.len(), ..])
                .assign(&p);
        }
        Ok((argmax_rows(&probs.view()), probs))
    }

    /// Fraction of windows classified correctly.
    pub fn accuracy(&self, ds: &SeriesDataset) -> Result<f64> {
        let (pred, _) = self.predict(ds)?;
        Ok(accuracy(&pred, &ds.labels))
    }
}

fn accuracy(pred: &[u32], labels: &[u32]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

fn check_compatible(net: &Network<f32>, ds: &SeriesDataset) -> Result<()> {
    let spec = net.spec();
    if ds.f != spec.input || ds.l != spec.series_len || ds.n_classes != spec.classes() {
        return Err(Error::ShapeMismatch {
            expected: format!(
                "windows of {} x {} with {} classes",
                spec.series_len,
                spec.input,
                spec.classes()
            ),
            got: format!("{} x {} with {} classes", ds.l, ds.f, ds.n_classes),
        });
    }
    Ok(())
}

/// Mean eval-mode loss and accuracy over a dataset.
fn evaluate(net: &Network<f32>, ds: &SeriesDataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let x = batch_tensor(ds, chunk);
        let labels: Vec<u32> = chunk.iter().map(|&i| ds.labels[i]).collect();
        let logits = net.logits(x.view(), Mode::Eval)?;
        loss += f64::from(cross_entropy(&logits, &labels)) * chunk.len() as f64;
        let pred = argmax_rows(&logits.view());
        correct += pred.iter().zip(&labels).filter(|(a, b)| a == b).count();
    }
    let n = ds.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

fn clip(grads: &mut [Array2<f32>], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        grads.iter_mut().for_each(|g| g.mapv_inplace(|v| v * scale));
    }
}

/// Mini-batch training with validation-driven learning-rate decay and
/// early stopping. Returns the weights with the lowest validation loss.
pub fn train(
    name: &str,
    network: Network<f32>,
    config: &TrainConfig,
    train_ds: &SeriesDataset,
    val_ds: &SeriesDataset,
) -> Result<ClassifierModel> {
    config.validate()?;
    check_compatible(&network, train_ds)?;
    check_compatible(&network, val_ds)?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::DegenerateData(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let mut net = network;
    let mut adam = Adam::new(net.params(), config);
    let mut schedule = PlateauSchedule::new(config);
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut best = net.params().to_vec();
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut order_rng);
        let lr = schedule.lr;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let x = batch_tensor(train_ds, batch);
            let labels: Vec<u32> = batch.iter().map(|&i| train_ds.labels[i]).collect();
            let (loss, mut grads, probs) = net
                .loss_and_gradients(x.view(), &labels, &mut dropout_rng)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch },
                    other => other,
                })?;
            if let Some(c) = config.clip_norm {
                clip(&mut grads, c);
            }
            adam.update(net.params_mut(), &grads, lr);
            loss_sum += f64::from(loss) * batch.len() as f64;
            correct += argmax_rows(&probs.view())
                .iter()
                .zip(&labels)
                .filter(|(a, b)| a == b)
                .count();
        }
        let (val_loss, val_acc) = evaluate(&net, val_ds)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let n = train_ds.len() as f64;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
            lr,
        });
        let step = schedule.step(val_loss);
        if step.improved {
            best.clone_from_slice(net.params());
        }
        if step.stop {
            break;
        }
    }
    let network = Network::from_params(net.spec().clone(), best)?;
    Ok(ClassifierModel {
        name: name.to_string(),
        network,
        stats: train_ds.stats.clone(),
        history,
    })
}
