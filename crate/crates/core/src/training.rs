//! Adam training with coupled weight decay, deterministic splits and
//! per-epoch metrics.
//!
//! Within a batch, samples are differentiated in parallel and their
//! gradients summed in sample order, so a run is bit-reproducible for a
//! given seed regardless of thread count.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetContainer;
use crate::error::{ModelError, TensorError, TrainError};
use crate::graph::{image_to_features, GridCache};
use crate::layers::{forward, sample_gradient, GraphContext, ModelConfig, ModelParams};
use crate::metrics::{accuracy, argmax, confusion_matrix, per_class_recall, roc_auc_ovr, AucReport};
use crate::tape::{log_sum_exp, softmax_rows};
use crate::tensor::Scalar;

const SPLIT_STREAM: u64 = u64::MAX - 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub split_fractions: [f64; 3],
    /// Record elapsed milliseconds in metrics; off keeps metrics files
    /// byte-identical across runs.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            weight_decay: 0.01,
            epochs: 4,
            batch_size: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            split_fractions: [0.8, 0.1, 0.1],
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        check_fractions(&self.split_fractions)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

fn check_fractions(f: &[f64; 3]) -> Result<(), TrainError> {
    if f.iter().any(|&v| !(v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TrainError::Config(format!("split fractions {f:?} must be positive and sum to 1")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with a seeded generator and cuts it into
/// `floor(n·f₀)`, `floor(n·f₁)` and the remainder.
///
/// ```
/// use gcec::training::split;
/// let s = split(58_954, [0.8, 0.1, 0.1], 1).unwrap();
/// assert_eq!((s.train.len(), s.val.len(), s.test.len()), (47_163, 5_895, 5_896));
/// ```
pub fn split(n: usize, fractions: [f64; 3], seed: u64) -> Result<Splits, TrainError> {
    if n == 0 {
        return Err(TrainError::EmptyDataset);
    }
    check_fractions(&fractions)?;
    // The tiny offset keeps products such as 10·0.7 from flooring one short.
    let size = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_train = size(fractions[0]).min(n);
    let n_val = size(fractions[1]).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    order.shuffle(&mut rng);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(Splits { train: order, val, test })
}

/// Training order of `indices` for one epoch.
pub fn epoch_order(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Per-tensor first and second moments and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }
}

/// One Adam update with the L2 penalty folded into the gradient.
///
/// ```
/// use gcec::training::{adam_step, AdamConfig, AdamState};
/// let cfg = AdamConfig { learning_rate: 0.1, weight_decay: 0.0, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
/// let mut p = vec![0.0f64];
/// let mut state = AdamState::new(&[1]);
/// adam_step(&mut [p.as_mut_slice()], &[vec![1.0]], &mut state, &cfg).unwrap();
/// assert!((p[0] + 0.1).abs() < 1e-7);
/// ```
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::IndexOutOfRange {
            index: grads.len(),
            len: params.len(),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(TensorError::IndexOutOfRange {
                index: g.len(),
                len: p.len(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let wd = T::from_f64(cfg.weight_decay);
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.epsilon);
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    for (k, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            let g = grads[k][i] + wd * p[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub acc: f64,
    pub auc_per_class: Vec<Option<f64>>,
    pub auc_macro: Option<f64>,
    pub wall_ms: u64,
}

impl EpochMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Predictions and summary statistics over a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    pub acc: f64,
    pub auc: AucReport,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

impl EvalReport {
    fn from_logits(logits: &[Vec<f64>], labels: Vec<usize>) -> Result<Self, TrainError> {
        let mut loss = 0.0;
        for (z, &l) in logits.iter().zip(&labels) {
            loss += log_sum_exp(z) - z[l];
        }
        let probabilities: Vec<Vec<f64>> = logits.iter().map(|z| softmax_rows(z, z.len())).collect();
        let predictions: Vec<usize> = logits.iter().map(|z| argmax(z)).collect();
        let acc = accuracy(&predictions, &labels).map_err(|e| TrainError::Mismatch(e.to_string()))?;
        let auc = roc_auc_ovr(&probabilities, &labels).map_err(|e| TrainError::Mismatch(e.to_string()))?;
        Ok(EvalReport {
            loss: loss / labels.len() as f64,
            acc,
            auc,
            predictions,
            labels,
            probabilities,
        })
    }

    pub fn confusion_matrix(&self, n_classes: usize) -> Vec<Vec<u64>> {
        confusion_matrix(&self.predictions, &self.labels, n_classes).expect("labels checked on load")
    }

    pub fn per_class_recall(&self, n_classes: usize) -> Vec<Option<f64>> {
        per_class_recall(&self.confusion_matrix(n_classes))
    }

    pub fn metrics(&self, epoch: usize, split: &str, wall_ms: u64) -> EpochMetrics {
        EpochMetrics {
            epoch,
            split: split.to_string(),
            loss: self.loss,
            acc: self.acc,
            auc_per_class: self.auc.per_class.clone(),
            auc_macro: self.auc.macro_avg,
            wall_ms,
        }
    }
}

/// Checks that a container fits a model config.
pub fn check_dataset(data: &DatasetContainer, config: &ModelConfig) -> Result<(), TrainError> {
    let found = (data.height(), data.width(), data.channels());
    let want = (config.height, config.width, config.channels);
    if found != want {
        return Err(TrainError::Mismatch(format!(
            "images are {}x{}x{}, model expects {}x{}x{}",
            found.0, found.1, found.2, want.0, want.1, want.2
        )));
    }
    if data.n_classes() != config.n_classes {
        return Err(TrainError::Mismatch(format!(
            "dataset has {} classes, model expects {}",
            data.n_classes(),
            config.n_classes
        )));
    }
    if let Some(index) = (0..data.len()).find(|&i| data.label(i) >= config.n_classes) {
        return Err(TrainError::LabelOutOfRange {
            label: data.label(index),
            index,
            classes: config.n_classes,
        });
    }
    Ok(())
}

fn features<T: Scalar>(data: &DatasetContainer, i: usize) -> Result<crate::tensor::Tensor<T>, TrainError> {
    image_to_features(data.image(i), data.height(), data.width(), data.channels())
        .map_err(|e| TrainError::Model(ModelError::Graph(e)))
}

/// Forward pass over `indices` (in parallel, results in index order).
pub fn evaluate(
    ctx: &GraphContext,
    config: &ModelConfig,
    params: &ModelParams<f32>,
    data: &DatasetContainer,
    indices: &[usize],
) -> Result<EvalReport, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let logits = indices
        .par_iter()
        .map(|&i| {
            let x = features::<f32>(data, i)?;
            let z = forward(ctx, config, params, &x)?;
            Ok(z.iter().map(|&v| v as f64).collect())
        })
        .collect::<Result<Vec<Vec<f64>>, TrainError>>()?;
    EvalReport::from_logits(&logits, indices.iter().map(|&i| data.label(i)).collect())
}

pub struct TrainOutput {
    pub params: ModelParams<f32>,
    pub history: Vec<EpochMetrics>,
    pub splits: Splits,
    /// Final test-split evaluation; absent when no epoch ran.
    pub test: Option<EvalReport>,
}

/// Trains from a fresh seeded initialization. Each metrics record is passed
/// to `sink` as soon as it is produced.
pub fn train(
    data: &DatasetContainer,
    model: &ModelConfig,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&EpochMetrics) -> std::io::Result<()>,
) -> Result<TrainOutput, TrainError> {
    let params = ModelParams::init(model, cfg.seed)?;
    train_from(data, model, cfg, params, sink)
}

/// Trains starting from the given parameters.
pub fn train_from(
    data: &DatasetContainer,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut params: ModelParams<f32>,
    sink: &mut dyn FnMut(&EpochMetrics) -> std::io::Result<()>,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    model.validate()?;
    params.check_config(model)?;
    check_dataset(data, model)?;
    let splits = split(data.len(), cfg.split_fractions, cfg.seed)?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(TrainError::Config(format!(
            "{} samples leave an empty training or validation split",
            data.len()
        )));
    }
    let ctx = GraphContext::for_config(model, &GridCache::new())?;
    let start = Instant::now();
    let wall = || if cfg.wall_clock { start.elapsed().as_millis() as u64 } else { 0 };
    let mut emit = |m: EpochMetrics, history: &mut Vec<EpochMetrics>| -> Result<(), TrainError> {
        sink(&m).map_err(TrainError::Sink)?;
        history.push(m);
        Ok(())
    };

    let mut history = Vec::new();
    let initial = evaluate(&ctx, model, &params, data, &splits.val)?;
    emit(initial.metrics(0, "val", wall()), &mut history)?;

    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut adam = AdamState::<f32>::new(&sizes);
    let adam_cfg = cfg.adam();
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(&splits.train, cfg.seed, epoch);
        let mut epoch_logits = Vec::with_capacity(order.len());
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let x = features::<f32>(data, i)?;
                    Ok(sample_gradient(&ctx, model, &params, &x, data.label(i))?)
                })
                .collect::<Result<Vec<_>, TrainError>>()?;
            let mut total: Vec<Vec<f32>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            for r in &results {
                epoch_loss += r.loss as f64;
                epoch_logits.push(r.logits.iter().map(|&v| v as f64).collect::<Vec<f64>>());
                for (acc, g) in total.iter_mut().zip(&r.grads) {
                    for (a, &v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f32;
            for g in total.iter_mut().flatten() {
                *g *= scale;
            }
            let mut slices: Vec<&mut [f32]> = params.tensors_mut().into_iter().map(|t| t.data_mut()).collect();
            adam_step(&mut slices, &total, &mut adam, &adam_cfg)?;
        }
        let labels: Vec<usize> = order.iter().map(|&i| data.label(i)).collect();
        let mut running = EvalReport::from_logits(&epoch_logits, labels)?;
        // Loss as accumulated during the epoch, before each step.
        running.loss = epoch_loss / order.len() as f64;
        emit(running.metrics(epoch, "train", wall()), &mut history)?;
        let val = evaluate(&ctx, model, &params, data, &splits.val)?;
        emit(val.metrics(epoch, "val", wall()), &mut history)?;
    }

    let test = if cfg.epochs > 0 && !splits.test.is_empty() {
        let report = evaluate(&ctx, model, &params, data, &splits.test)?;
        emit(report.metrics(cfg.epochs, "test", wall()), &mut history)?;
        Some(report)
    } else {
        None
    };
    Ok(TrainOutput {
        params,
        history,
        splits,
        test,
    })
}
