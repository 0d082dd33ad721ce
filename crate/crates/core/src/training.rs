//! Adam, learning-rate decay, the epoch loop and early stopping.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::classifier::{self, Model, ModelParams, Sample};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{self, MetricsReport};
use crate::numerics::{ParamGrad, ParamSet};
use crate::seed;
use crate::textdata::{self, PAD};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Validation macro-F1 must beat the best so far by more than this.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

/// First and second moment buffers, one per parameter entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    names: Vec<String>,
    /// `(entry name, row)` pairs that are never updated.
    frozen_rows: Vec<(String, usize)>,
}

impl AdamState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        let entries = params.entries();
        AdamState {
            m: entries.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: entries.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            names: entries.into_iter().map(|(n, _)| n).collect(),
            frozen_rows: Vec::new(),
        }
    }

    /// State for a model with the padding rows of its embedding tables frozen.
    pub fn for_model(params: &ModelParams) -> Self {
        let mut s = Self::new(params);
        for table in ModelParams::EMBEDDING_TABLES {
            if s.names.iter().any(|n| n == table) {
                s.frozen_rows.push((table.to_string(), PAD));
            }
        }
        s
    }

    pub fn freeze_row(mut self, name: &str, row: usize) -> Self {
        self.frozen_rows.push((name.to_string(), row));
        self
    }
}

/// One bias-corrected Adam update from the gradient slots of `params`.
pub fn adam_step<P: ParamSet>(params: &mut P, state: &mut AdamState, lr: f64) -> Result<()> {
    let mut entries = params.entries_mut();
    if entries.len() != state.m.len() {
        return Err(Error::State(format!(
            "optimizer tracks {} tensors, parameters have {}",
            state.m.len(),
            entries.len()
        )));
    }
    for ((name, t), expected) in entries.iter().zip(&state.names) {
        if name != expected {
            return Err(Error::State(format!("optimizer expected {expected}, found {name}")));
        }
        if t.grad().is_none() {
            return Err(Error::State(format!("no gradient for {name}")));
        }
    }
    for ((name, t), m) in entries.iter().zip(&state.m) {
        if t.numel() != m.len() {
            return Err(Error::State(format!("{name}: {} moments for {} entries", m.len(), t.numel())));
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (e, (name, t)) in entries.iter_mut().enumerate() {
        let frozen: Vec<usize> = state
            .frozen_rows
            .iter()
            .filter(|(n, _)| n == name)
            .map(|&(_, r)| r)
            .collect();
        let cols = t.cols();
        let g = t.grad().expect("checked").to_vec();
        let (m, v) = (&mut state.m[e], &mut state.v[e]);
        let data = t.data_mut();
        for i in 0..data.len() {
            if !frozen.is_empty() && frozen.contains(&(i / cols)) {
                continue;
            }
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// `lr0 · gamma^epoch` with a zero-based epoch index.
pub fn decay_lr(lr0: f64, epoch: usize, gamma: f64) -> f64 {
    lr0 * gamma.powi(epoch as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Compute per-example gradients of a batch on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::from_run(&RunConfig::default())
    }
}

impl TrainConfig {
    pub fn from_run(c: &RunConfig) -> Self {
        TrainConfig {
            lr: c.lr,
            lr_decay: c.lr_decay,
            batch_size: c.batch_size,
            epochs: c.epochs,
            patience: c.patience,
            seed: c.seed,
            parallel: c.parallel,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr {} / decay {} out of range", self.lr, self.lr_decay)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, epochs and patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Mean training-mode loss over every example of the epoch.
    pub mean_loss: f64,
    pub lr: f64,
}

fn tag_batch(batch: usize, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("batch {batch}: {msg}")),
        other => other,
    }
}

/// One pass over seeded-shuffled batches. Each example's dropout stream is
/// derived from `(seed, epoch, batch, position)`, so serial and parallel
/// runs consume identical randomness; gradients are summed in example order.
pub fn train_epoch(
    model: &mut Model,
    state: &mut AdamState,
    train: &[Sample],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    cfg.validate()?;
    let lr = decay_lr(cfg.lr, epoch, cfg.lr_decay);
    let batches = textdata::batches(train, cfg.batch_size, true, seed::derive_seed(cfg.seed, &[epoch as u64]))?;
    let mut loss_sum = 0.0;
    for (b, batch) in batches.iter().enumerate() {
        let run = |(pos, sample): (usize, &&Sample)| {
            let mut rng = seed::rng(cfg.seed, &[0xD0, epoch as u64, b as u64, pos as u64]);
            classifier::loss_and_grads(model, sample, true, &mut rng)
        };
        let results: Vec<Result<(classifier::Prediction, Vec<(String, ParamGrad)>)>> = if cfg.parallel {
            batch.par_iter().enumerate().map(run).collect()
        } else {
            batch.iter().enumerate().map(run).collect()
        };
        model.params.zero_grads();
        for r in results {
            let (pred, grads) = r.map_err(|e| tag_batch(b, e))?;
            let loss = pred.loss.expect("labelled");
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("batch {b}: loss is {loss}")));
            }
            loss_sum += loss;
            model.params.accumulate(&grads)?;
        }
        let scale = 1.0 / batch.len() as f64;
        for (_, t) in model.params.entries_mut() {
            t.scale_grad(scale);
        }
        adam_step(&mut model.params, state, lr)?;
        if !model.params.is_finite() {
            return Err(Error::Numeric(format!("batch {b}: parameters became non-finite")));
        }
    }
    Ok(EpochStats {
        mean_loss: loss_sum / train.len() as f64,
        lr,
    })
}

/// Inference-mode predictions for every sample.
pub fn predict_all(model: &Model, samples: &[Sample], parallel: bool) -> Result<Vec<u8>> {
    let one = |s: &Sample| classifier::predict(model, s).map(|p| p.pred);
    if parallel {
        samples.par_iter().map(one).collect()
    } else {
        samples.iter().map(one).collect()
    }
}

pub fn evaluate_samples(model: &Model, samples: &[Sample], parallel: bool) -> Result<MetricsReport> {
    let preds = predict_all(model, samples, parallel)?;
    let labels: Vec<u8> = samples
        .iter()
        .map(|s| s.label().ok_or_else(|| Error::Contract("unlabelled example in evaluation".into())))
        .collect::<Result<_>>()?;
    evaluation::evaluate(&preds, &labels)
}

/// Validation scores consulted after every epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValScore {
    pub accuracy: f64,
    pub macro_f1: f64,
}

pub trait Monitor {
    fn score(&mut self, model: &Model, val: &[Sample]) -> Result<ValScore>;
}

/// Scores the model on the validation samples.
pub struct Validation {
    pub parallel: bool,
}

impl Monitor for Validation {
    fn score(&mut self, model: &Model, val: &[Sample]) -> Result<ValScore> {
        let r = evaluate_samples(model, val, self.parallel)?;
        Ok(ValScore {
            accuracy: r.accuracy,
            macro_f1: r.macro_f1,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch\tlr\tloss\ttrain_acc\tval_acc\tval_macro_f1";

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.records {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.epoch, r.lr, r.loss, r.train_acc, r.val_acc, r.val_macro_f1
            )
            .unwrap();
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == Self::HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing train log header".into(),
                })
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            if f.len() != 6 {
                return Err(bad(format!("expected 6 fields, got {}", f.len())));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|e| bad(format!("field {}: {e}", k + 1)));
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|e| bad(format!("epoch: {e}")))?,
                lr: num(1)?,
                loss: num(2)?,
                train_acc: num(3)?,
                val_acc: num(4)?,
                val_macro_f1: num(5)?,
            });
        }
        Ok(TrainLog { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Parameters from the epoch with the best validation macro-F1.
    pub model: Model,
    pub log: TrainLog,
    /// One-based.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub fn fit(model: Model, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<FitResult> {
    let mut monitor = Validation { parallel: cfg.parallel };
    fit_with_monitor(model, train, val, cfg, &mut monitor)
}

/// Trains until `epochs` are done or `patience` consecutive evaluations fail
/// to improve validation macro-F1; ties keep the earlier checkpoint.
pub fn fit_with_monitor<M: Monitor>(
    mut model: Model,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    monitor: &mut M,
) -> Result<FitResult> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput("training and validation sets must be non-empty".into()));
    }
    cfg.validate()?;
    let mut state = AdamState::for_model(&model.params);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let stats = train_epoch(&mut model, &mut state, train, cfg, epoch)?;
        let train_acc = evaluate_samples(&model, train, cfg.parallel)?.accuracy;
        let score = monitor.score(&model, val)?;
        log.records.push(EpochRecord {
            epoch: epoch + 1,
            lr: stats.lr,
            loss: stats.mean_loss,
            train_acc,
            val_acc: score.accuracy,
            val_macro_f1: score.macro_f1,
        });
        let improved = best.as_ref().is_none_or(|(f1, _, _)| score.macro_f1 > f1 + MIN_IMPROVEMENT);
        if improved {
            best = Some((score.macro_f1, epoch + 1, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    model.params.entries_mut().into_iter().for_each(|(_, t)| t.clear_grad());
    Ok(FitResult {
        model,
        log,
        best_epoch,
        stopped_early,
    })
}
