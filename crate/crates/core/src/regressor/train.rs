use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::lstm::{bce_with_logit, sigmoid, LstmStack};
use crate::error::{usage, Error, Result};
use crate::evaluate::{binary_contingency, metrics};
use crate::windowing::WindowedSet;

/// Windows per gradient work unit. Fixed so that the reduction order, and
/// therefore the trained weights, do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_per_dataset: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub decision_threshold: f64,
    pub gradient_clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_dataset: 10,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            seed: 0,
            decision_threshold: 0.5,
            gradient_clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_dataset == 0 {
            return Err(usage("epochs_per_dataset must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(usage("batch_size must be at least 1"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(usage("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(usage("moment decays must lie in [0, 1)"));
        }
        if self.gradient_clip_norm.is_nan() || self.gradient_clip_norm <= 0.0 {
            return Err(usage("gradient_clip_norm must be positive"));
        }
        check_threshold(self.decision_threshold)
    }

    /// SHA-256 of the canonical JSON encoding, stored with model artifacts.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("decision threshold {t} must lie strictly between 0 and 1")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch count across all datasets.
    pub epoch: usize,
    /// Index of the dataset in training order.
    pub dataset: usize,
    pub mean_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + cfg.epsilon);
        }
    }
}

/// Summed loss and gradient over a batch of `(window, target)` pairs.
fn batch_gradient(model: &LstmStack, batch: &[(&[f64], f64)]) -> (f64, Vec<f64>) {
    let n = model.params().len();
    let partials: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n];
            let mut loss = 0.0;
            for &(x, y) in chunk {
                let cache = model.forward_cached(x);
                loss += bce_with_logit(cache.logit, y);
                model.backward(x, &cache, sigmoid(cache.logit) - y, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    let mut total = vec![0.0; n];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
    }
    (loss, total)
}

/// Trains sequentially over `datasets` in the given order, running
/// `epochs_per_dataset` epochs on each before moving on.
///
/// Each epoch visits the dataset in a seeded shuffled order with mini-batches
/// of `batch_size`; the batch-mean gradient is clipped to
/// `gradient_clip_norm` before the Adam update.
pub fn train(model: &mut LstmStack, datasets: &[&WindowedSet], cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(usage("no training datasets"));
    }
    for (i, ds) in datasets.iter().enumerate() {
        if ds.spec.length != model.steps() || ds.spec.width != model.features() {
            return Err(usage(format!(
                "dataset {i} has windows {}x{}, model expects {}x{}",
                ds.spec.length,
                ds.spec.width,
                model.steps(),
                model.features()
            )));
        }
        if ds.is_empty() {
            return Err(usage(format!("training dataset {i} has no windows")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut adam = Adam::new(model.params().len());
    let mut trace = Vec::with_capacity(datasets.len() * cfg.epochs_per_dataset);
    for (d, ds) in datasets.iter().enumerate() {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        for _ in 0..cfg.epochs_per_dataset {
            let epoch = trace.len() + 1;
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
                let batch: Vec<(&[f64], f64)> = idx.iter().map(|&g| (ds.window(g), f64::from(ds.y1[g]))).collect();
                let (loss, mut grad) = batch_gradient(model, &batch);
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Training(format!("non-finite loss at epoch {epoch}, batch {}", b + 1)));
                }
                epoch_loss += loss;
                let scale = 1.0 / batch.len() as f64;
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() * scale;
                let clip = if norm > cfg.gradient_clip_norm { cfg.gradient_clip_norm / norm } else { 1.0 };
                for g in &mut grad {
                    *g *= scale * clip;
                }
                adam.step(model.params_mut(), &grad, cfg);
            }
            trace.push(EpochRecord {
                epoch,
                dataset: d,
                mean_loss: epoch_loss / ds.len() as f64,
            });
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOutput {
    pub probabilities: Vec<f64>,
    pub binary: Vec<u8>,
}

pub fn predict_probabilities(model: &LstmStack, windows: &WindowedSet) -> Result<Vec<f64>> {
    if windows.spec.flat_len() != model.steps() * model.features() {
        return Err(usage("window shape does not match the model"));
    }
    (0..windows.len())
        .into_par_iter()
        .map(|g| model.forward(windows.window(g)))
        .collect()
}

/// Thresholds probabilities with the `p >= threshold` convention.
pub fn predict_binary(model: &LstmStack, windows: &WindowedSet, threshold: f64) -> Result<ForecastOutput> {
    check_threshold(threshold)?;
    let probabilities = predict_probabilities(model, windows)?;
    let binary = threshold_probabilities(&probabilities, threshold);
    Ok(ForecastOutput { probabilities, binary })
}

pub fn threshold_probabilities(probabilities: &[f64], threshold: f64) -> Vec<u8> {
    probabilities.iter().map(|&p| u8::from(p >= threshold)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub widths: Vec<usize>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Trains one model per layer stack on identical data and seed and reports
/// its recall and accuracy on `test`.
pub fn depth_sweep(
    cfg: &TrainConfig,
    stacks: &[Vec<usize>],
    train_sets: &[&WindowedSet],
    test_sets: &[&WindowedSet],
) -> Result<Vec<DepthRow>> {
    let first = train_sets.first().ok_or_else(|| usage("no training datasets"))?;
    stacks
        .iter()
        .map(|widths| {
            let mut model = LstmStack::new(widths, first.spec.length, first.spec.width, cfg.seed)?;
            train(&mut model, train_sets, cfg)?;
            let mut pred = Vec::new();
            let mut truth = Vec::new();
            for ws in test_sets {
                pred.extend(predict_binary(&model, ws, cfg.decision_threshold)?.binary);
                truth.extend_from_slice(&ws.y1);
            }
            let m = metrics(&binary_contingency(&pred, &truth)?);
            Ok(DepthRow { widths: widths.clone(), recall: m.recall, accuracy: m.accuracy })
        })
        .collect()
}
