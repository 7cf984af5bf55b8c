//! Mini-batch Adam with a reduce-on-plateau schedule and best-validation
//! checkpointing, shared by the operator network and the FNN baseline.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSample;
use crate::error::{Error, Result};

/// Normalized design matrices: one input matrix per sub-network, rows are
/// samples.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub inputs: Vec<Array2<f64>>,
    pub labels: Array2<f64>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.labels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A model trainable by [`train`]: a flat parameter vector and a
/// mean-squared loss on prepared data.
pub trait Regressor {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Loss on rows `idx` of `data` with parameters `params`; adds the
    /// gradient into `grad` when given.
    fn loss_grad(&self, params: &[f64], data: &Prepared, idx: &[usize], grad: Option<&mut [f64]>)
        -> f64;
}

/// Regressors that build their own normalization from raw samples.
pub trait Trainable: Regressor {
    fn fit_normalization(&mut self, samples: &[DatasetSample]) -> Result<()>;
    fn prepare(&self, samples: &[DatasetSample]) -> Result<Prepared>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Relative improvement needed to reset the patience counter.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    1e-4
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 50,
            min_lr: 1e-5,
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub scheduler: PlateauConfig,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 2000,
            batch_size: 256,
            scheduler: PlateauConfig::default(),
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("training: {m}")));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return bad("epsilon, batch_size and epochs must be positive");
        }
        let s = &self.scheduler;
        if !(s.factor > 0.0 && s.factor < 1.0) || !(s.min_lr >= 0.0) || !(s.threshold >= 0.0) {
            return bad("scheduler factor must lie in (0, 1), min_lr and threshold >= 0");
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainingConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Reduce-on-plateau learning-rate schedule driven by the validation loss.
#[derive(Debug, Clone)]
pub struct Plateau {
    cfg: PlateauConfig,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(cfg: PlateauConfig, lr: f64) -> Self {
        Self {
            cfg,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best * (1.0 - self.cfg.threshold) {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub learning_rate: Vec<f64>,
}

impl LossHistory {
    pub fn best_validation(&self) -> Option<(usize, f64)> {
        self.validation
            .iter()
            .copied()
            .enumerate()
            .fold(None, |acc, (i, v)| match acc {
                Some((_, b)) if b <= v => acc,
                _ => Some((i, v)),
            })
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "validation_loss", "learning_rate"])?;
        for i in 0..self.train.len() {
            out.write_record([
                (i + 1).to_string(),
                self.train[i].to_string(),
                self.validation[i].to_string(),
                self.learning_rate[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Seeded train/validation index split.
pub fn split_indices(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let train = idx.split_off(n_val);
    (train, idx)
}

/// The validation part of `dataset` as [`train`] splits it under `cfg`.
pub fn validation_subset(dataset: &[DatasetSample], cfg: &TrainingConfig) -> Vec<DatasetSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (_, va) = split_indices(dataset.len(), cfg.validation_fraction, &mut rng);
    va.iter().map(|&i| dataset[i].clone()).collect()
}

/// Adam over mini-batches of `train_data`, validating on `val_data` after
/// every epoch. Leaves the best-validation parameters in `model`.
pub fn fit<M: Regressor + ?Sized>(
    model: &mut M,
    train_data: &Prepared,
    val_data: &Prepared,
    cfg: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossHistory> {
    cfg.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Empty("training or validation split"));
    }
    let n_params = model.params().len();
    let mut params = model.params().to_vec();
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut adam = Adam::new(n_params, cfg);
    let mut sched = Plateau::new(cfg.scheduler, cfg.learning_rate);
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let val_idx: Vec<usize> = (0..val_data.len()).collect();
    let mut history = LossHistory::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let lr = sched.lr();
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let l = model.loss_grad(&params, train_data, batch, Some(&mut grad));
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    checkpoint: best,
                });
            }
            total += l * batch.len() as f64;
            adam.step(&mut params, &grad, lr);
        }
        let train_loss = total / train_data.len() as f64;
        let val_loss = model.loss_grad(&params, val_data, &val_idx, None);
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                checkpoint: best,
            });
        }
        if val_loss < best_val {
            best_val = val_loss;
            best.copy_from_slice(&params);
        }
        history.train.push(train_loss);
        history.validation.push(val_loss);
        history.learning_rate.push(lr);
        sched.observe(val_loss);
        if epoch % 100 == 0 {
            log::debug!("epoch {epoch}: train {train_loss:.3e} val {val_loss:.3e} lr {lr:.1e}");
        }
    }
    model.params_mut().copy_from_slice(&best);
    Ok(history)
}

fn split_and_fit<M: Trainable>(
    model: &mut M,
    dataset: &[DatasetSample],
    cfg: &TrainingConfig,
    refit_norm: bool,
) -> Result<LossHistory> {
    cfg.validate()?;
    if dataset.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "training needs at least 10 samples, got {}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (tr, va) = split_indices(dataset.len(), cfg.validation_fraction, &mut rng);
    let train_set: Vec<DatasetSample> = tr.iter().map(|&i| dataset[i].clone()).collect();
    let val_set: Vec<DatasetSample> = va.iter().map(|&i| dataset[i].clone()).collect();
    if refit_norm {
        model.fit_normalization(&train_set)?;
    }
    let train_data = model.prepare(&train_set)?;
    let val_data = model.prepare(&val_set)?;
    fit(model, &train_data, &val_data, cfg, &mut rng)
}

/// Splits `dataset`, fits normalization on the training part and runs [`fit`].
pub fn train<M: Trainable>(
    model: &mut M,
    dataset: &[DatasetSample],
    cfg: &TrainingConfig,
) -> Result<LossHistory> {
    split_and_fit(model, dataset, cfg, true)
}

/// Like [`train`] but starts from the current parameters and keeps the
/// existing normalization.
pub fn fine_tune<M: Trainable>(
    model: &mut M,
    dataset: &[DatasetSample],
    cfg: &TrainingConfig,
) -> Result<LossHistory> {
    split_and_fit(model, dataset, cfg, false)
}
