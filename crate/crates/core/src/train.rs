//! Adam with a linear-warmup cosine schedule, seeded epoch shuffling,
//! periodic validation and best-checkpoint tracking.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::FlatConfig;
use crate::data::FeatureSample;
use crate::error::{Error, Result};
use crate::model::{forward, loss_and_grad, ModelConfig, ModelParams, TargetNorm};
use crate::signal::features::SpectrogramTensor;
use crate::sim::noise::{derived_rng, stream};
use crate::sim::scene::distance;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub total_steps: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Training inputs are rolled along the frequency axis by a uniform
    /// random number of bins in `[-freq_shift, freq_shift]`; 0 disables it.
    pub freq_shift: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            peak_lr: 0.0007,
            warmup_frac: 0.01,
            total_steps: 2000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            freq_shift: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 9] = [
        "batch_size",
        "peak_lr",
        "warmup_frac",
        "total_steps",
        "seed",
        "beta1",
        "beta2",
        "eps",
        "freq_shift",
    ];

    /// Overrides from `train.*` keys.
    pub fn apply(&mut self, cfg: &FlatConfig) -> Result<()> {
        if let Some(v) = cfg.get_parsed("train.batch_size")? {
            self.batch_size = v;
        }
        if let Some(v) = cfg.get_parsed("train.total_steps")? {
            self.total_steps = v;
        }
        if let Some(v) = cfg.get_parsed("train.seed")? {
            self.seed = v;
        }
        if let Some(v) = cfg.get_parsed("train.freq_shift")? {
            self.freq_shift = v;
        }
        for (key, slot) in [
            ("train.peak_lr", &mut self.peak_lr),
            ("train.warmup_frac", &mut self.warmup_frac),
            ("train.beta1", &mut self.beta1),
            ("train.beta2", &mut self.beta2),
            ("train.eps", &mut self.eps),
        ] {
            if let Some(v) = cfg.get_parsed(key)? {
                *slot = v;
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::Invalid(format!("warmup_frac {} not in (0, 1)", self.warmup_frac)));
        }
        if self.total_steps == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("total_steps and batch_size must be >= 1".into()));
        }
        if !(self.peak_lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Invalid("peak_lr, betas and eps out of range".into()));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_frac * self.total_steps as f64).round() as usize
    }

    /// Validation runs after every this many steps.
    pub fn val_every(&self) -> usize {
        (self.total_steps / 20).max(1)
    }
}

/// Linear warmup from 0 to `peak_lr` over `w = round(warmup_frac * total)`
/// steps, then cosine decay to 0 at `total`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let (w, total) = (cfg.warmup_steps(), cfg.total_steps);
    let step = step.min(total);
    if step < w {
        return cfg.peak_lr * step as f64 / w as f64;
    }
    if total == w {
        return cfg.peak_lr;
    }
    let u = (step - w) as f64 / (total - w) as f64;
    cfg.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * u).cos())
}

/// First and second moment estimates, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(len: usize) -> Self {
        OptimizerState { m: vec![T::zero(); len], v: vec![T::zero(); len], step: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut OptimizerState<T>, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (c1, c2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::lit(lr), T::lit(cfg.eps));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + c1 * g;
        *v = b2 * *v + c2 * g * g;
        let mh = *m / bc1;
        let vh = *v / bc2;
        *p -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub last: ModelParams<T>,
    /// Lowest validation error; equals `last` without validation data.
    pub best: ModelParams<T>,
    pub best_val_mm: Option<f64>,
    pub best_step: usize,
    pub log: Vec<LogRow>,
}

/// Mean Euclidean error in mm over `samples`.
pub fn mean_error_mm<T: Scalar>(params: &ModelParams<T>, samples: &[FeatureSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("no samples to evaluate".into()));
    }
    let inputs: Vec<SpectrogramTensor<T>> = samples.iter().map(|s| s.input.cast()).collect();
    let refs: Vec<&SpectrogramTensor<T>> = inputs.iter().collect();
    let out = forward(params, &refs)?;
    let total: f64 = out
        .iter()
        .zip(samples)
        .map(|(p, s)| {
            let n = p.map(|v| v.to_f64().unwrap());
            distance(&params.target_norm.denormalize(&n), &s.target_mm)
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// Batch order for `epoch`: a permutation seeded by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derived_rng(seed, &[stream::SHUFFLE, epoch]));
    idx
}

/// Trains a fresh model initialized from `cfg.seed`.
pub fn train<T: Scalar>(
    model: ModelConfig,
    norm: TargetNorm,
    train_set: &[FeatureSample],
    val_set: &[FeatureSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let init = ModelParams::<T>::init(model, norm, cfg.seed)?;
    train_from(init, train_set, val_set, cfg)
}

/// Trains starting from `params`. Each step uses `lr_at(step)` for the
/// update; step indices run `0..total_steps`.
pub fn train_from<T: Scalar>(
    mut params: ModelParams<T>,
    train_set: &[FeatureSample],
    val_set: &[FeatureSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training split".into()));
    }
    let norm = params.target_norm;
    let targets: Vec<[T; 3]> = train_set
        .iter()
        .map(|s| norm.normalize(&s.target_mm).map(T::lit))
        .collect();
    let mut state = OptimizerState::new(params.num_params());
    let mut log = Vec::with_capacity(cfg.total_steps);
    let (mut best, mut best_val, mut best_step) = (params.clone(), None::<f64>, 0);

    let (mut epoch, mut order, mut cursor) = (0u64, epoch_order(train_set.len(), cfg.seed, 0), 0usize);
    for step in 0..cfg.total_steps {
        if cursor >= order.len() {
            epoch += 1;
            order = epoch_order(train_set.len(), cfg.seed, epoch);
            cursor = 0;
        }
        let batch = &order[cursor..(cursor + cfg.batch_size).min(order.len())];
        cursor += batch.len();

        let inputs: Vec<SpectrogramTensor<T>> = if cfg.freq_shift == 0 {
            batch.iter().map(|&i| train_set[i].input.cast()).collect()
        } else {
            let mut rng = derived_rng(cfg.seed, &[stream::AUGMENT, step as u64]);
            let m = cfg.freq_shift as isize;
            batch.iter().map(|&i| train_set[i].input.roll_bins(rng.gen_range(-m..=m)).cast()).collect()
        };
        let refs: Vec<&SpectrogramTensor<T>> = inputs.iter().collect();
        let tgt: Vec<[T; 3]> = batch.iter().map(|&i| targets[i]).collect();
        let (loss, grads) = loss_and_grad(&params, &refs, &tgt).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("step {step}, epoch {epoch}: {m}")),
            other => other,
        })?;
        let lr = lr_at(step, cfg);
        adam_step(&mut params.data, &grads.data, &mut state, lr, cfg)?;

        let mut row = LogRow { step, lr, train_loss: loss.to_f64().unwrap(), val_mm: None };
        if !val_set.is_empty() && ((step + 1) % cfg.val_every() == 0 || step + 1 == cfg.total_steps) {
            let v = mean_error_mm(&params, val_set)?;
            row.val_mm = Some(v);
            if best_val.map_or(true, |b| v < b) {
                best_val = Some(v);
                best = params.clone();
                best_step = step + 1;
            }
        }
        log.push(row);
    }
    if best_val.is_none() {
        best = params.clone();
        best_step = cfg.total_steps;
    }
    Ok(TrainOutcome { last: params, best, best_val_mm: best_val, best_step, log })
}

/// Writes the training log as CSV; `comments` become leading `# ` lines.
pub fn write_log_csv(path: &Path, comments: &[String], log: &[LogRow]) -> Result<()> {
    let mut out = Vec::new();
    for c in comments {
        writeln!(out, "# {c}").unwrap();
    }
    writeln!(out, "step,lr,train_loss,val_mm").unwrap();
    for r in log {
        let val = r.val_mm.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(out, "{},{:e},{:e},{}", r.step, r.lr, r.train_loss, val).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
