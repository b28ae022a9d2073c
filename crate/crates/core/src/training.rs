//! Adam, front-stream dropout and the early-stopping training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{collate, Dataset, SampleWindow};
use crate::error::{Error, Result};
use crate::inference::argmax;
use crate::models::{Model, TrainPass, WindowBatch};
use crate::nn::{bn_momentum, ParamStore};
use crate::tensor::ops::{softmax_cross_entropy, Mode};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    /// First moments, one per parameter.
    pub m: Vec<Tensor<T>>,
    /// Second moments, one per parameter.
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: params.iter().map(Tensor::zeros_like).collect(),
            v: params.iter().map(Tensor::zeros_like).collect(),
        }
    }
}

/// One bias-corrected Adam update. `names` labels parameters in errors.
///
/// Every gradient is checked before any parameter moves, so a failed step
/// leaves both the parameters and the state untouched.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    names: &[String],
    state: &mut AdamState<T>,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = || names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("{}: {:?} vs {:?}", name(), p.shape(), g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { param: name() });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let corr1 = 1.0 - c.beta1.powi(t);
    let corr2 = 1.0 - c.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = g.as_f64();
            let m1 = c.beta1 * m.as_f64() + (1.0 - c.beta1) * g;
            let v1 = c.beta2 * v.as_f64() + (1.0 - c.beta2) * g * g;
            *m = T::of(m1);
            *v = T::of(v1);
            let step = c.lr * (m1 / corr1) / ((v1 / corr2).sqrt() + c.epsilon);
            *p = T::of(p.as_f64() - step);
        }
    }
    Ok(())
}

/// Draws the per-window blocking coin.
pub fn dropout_coin(p: f64, seed: u64) -> bool {
    p > 0.0 && ChaCha8Rng::seed_from_u64(seed).random_bool(p.min(1.0))
}

/// With probability `p`, zeroes both front streams of the window.
pub fn apply_stream_dropout(mut window: SampleWindow, p: f64, seed: u64) -> SampleWindow {
    if dropout_coin(p, seed) {
        block_front(&mut window);
    }
    window
}

pub fn block_front(window: &mut SampleWindow) {
    window.front_frames.data_mut().fill(0.0);
    window.front_flows.data_mut().fill(0.0);
}

/// Forward, cross-entropy, backward and an Adam update on one batch.
/// Returns the loss before the update.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    batch: &WindowBatch<T>,
    labels: &[usize],
    adam: &mut AdamState<T>,
) -> Result<T> {
    let pass = model.train_pass(batch, labels)?;
    apply_pass(model, &pass, adam)?;
    Ok(pass.loss)
}

fn apply_pass<T: Scalar>(model: &mut Model<T>, pass: &TrainPass<T>, adam: &mut AdamState<T>) -> Result<()> {
    let names = model.params.names().to_vec();
    adam_step(model.params.values_mut(), &pass.grads, &names, adam)?;
    model.params.apply_stat_updates(&pass.stat_updates, bn_momentum());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub stream_dropout_p: f64,
    /// Epochs between validation passes.
    pub eval_period: usize,
    /// A validation loss must beat the best by more than this to count.
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            max_epochs: 50,
            lr: AdamConfig::default().lr,
            patience: 10,
            seed: 0,
            stream_dropout_p: 0.0,
            eval_period: 1,
            min_delta: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 || self.batch_size < 1 || self.eval_period < 1 {
            return Err(Error::Config("patience, batch_size and eval_period must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.stream_dropout_p) {
            return Err(Error::Config(format!("stream_dropout_p {} outside [0, 1]", self.stream_dropout_p)));
        }
        if !(self.lr >= 0.0) || !(self.min_delta >= 0.0) {
            return Err(Error::Config("lr and min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

impl HistoryRow {
    pub fn line(&self) -> String {
        format!("{}, {}, {:.6}, {:.6}", self.step, self.split, self.loss, self.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopState {
    pub best_loss: f64,
    pub since_improvement: usize,
    /// Step at which the best parameters were captured.
    pub best_step: u64,
}

impl EarlyStopState {
    pub fn new() -> Self {
        EarlyStopState {
            best_loss: f64::INFINITY,
            since_improvement: 0,
            best_step: 0,
        }
    }

    /// Records a validation loss; returns whether it is the new best.
    pub fn observe(&mut self, loss: f64, step: u64, min_delta: f64) -> bool {
        if loss < self.best_loss - min_delta || (self.best_loss.is_infinite() && loss.is_finite()) {
            self.best_loss = loss;
            self.best_step = step;
            self.since_improvement = 0;
            true
        } else {
            self.since_improvement += 1;
            false
        }
    }
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub history: Vec<HistoryRow>,
    pub early_stop: EarlyStopState,
    pub evaluations: usize,
    pub epochs: usize,
    pub steps: u64,
    /// Validation loss of the last evaluation.
    pub final_val_loss: f64,
}

/// Mean cross-entropy and accuracy of `model` over a dataset in eval mode.
pub fn dataset_metrics(model: &Model<f32>, ds: &Dataset, batch_size: usize, block_front: bool) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let ids: Vec<usize> = (0..ds.len()).collect();
    let (mut loss, mut hits) = (0.0, 0usize);
    for chunk in ids.chunks(batch_size.max(1)) {
        let (mut batch, labels) = ds.batch(chunk)?;
        if block_front {
            batch.front_frames.data_mut().fill(0.0);
            batch.front_flows.data_mut().fill(0.0);
        }
        let logits = model.logits(&batch, Mode::Eval)?;
        loss += softmax_cross_entropy(&logits, &labels)? as f64 * chunk.len() as f64;
        let k = logits.shape()[1];
        hits += logits
            .data()
            .chunks_exact(k)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
    }
    Ok((loss / ds.len() as f64, hits as f64 / ds.len() as f64))
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b);
    rng.random()
}

/// Trains with Adam and validation-based early stopping.
///
/// On return `model` holds the parameters of the best validation
/// evaluation; when `checkpoint` is given they are also saved there.
pub fn fit(
    model: &mut Model<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    mut history_sink: Option<&mut dyn Write>,
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    if train.classes() != model.config.classes || val.classes() != model.config.classes {
        return Err(Error::Config(format!(
            "dataset label space ({}) differs from the model's {} classes",
            train.classes(),
            model.config.classes
        )));
    }
    let mut adam = AdamState::new(model.params.values(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut stop = EarlyStopState::new();
    let mut best: Option<ParamStore<f32>> = None;
    let mut history = Vec::new();
    let (mut steps, mut evaluations, mut epochs, mut final_val_loss) = (0u64, 0, 0, f64::NAN);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (mut run_loss, mut run_hits, mut run_seen) = (0.0, 0usize, 0usize);

    for epoch in 0..cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let windows = chunk
                .iter()
                .map(|&i| {
                    let w = train.sample(i)?;
                    Ok(apply_stream_dropout(w, cfg.stream_dropout_p, mix(cfg.seed, steps, i as u64)))
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = collate(&windows.iter().collect::<Vec<_>>())?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels_at(i)).collect();
            let pass = model.train_pass(&batch, &labels)?;
            apply_pass(model, &pass, &mut adam)?;
            steps += 1;
            let k = pass.logits.shape()[1];
            run_loss += pass.loss as f64 * chunk.len() as f64;
            run_hits += pass
                .logits
                .data()
                .chunks_exact(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            run_seen += chunk.len();
        }
        epochs = epoch + 1;
        if epochs % cfg.eval_period != 0 && epochs != cfg.max_epochs {
            continue;
        }
        let mut rows = vec![HistoryRow {
            step: steps,
            split: "train".into(),
            loss: run_loss / run_seen as f64,
            accuracy: run_hits as f64 / run_seen as f64,
        }];
        (run_loss, run_hits, run_seen) = (0.0, 0, 0);
        let (vl, va) = dataset_metrics(model, val, cfg.batch_size, false)?;
        rows.push(HistoryRow {
            step: steps,
            split: "validation".into(),
            loss: vl,
            accuracy: va,
        });
        if let Some(w) = history_sink.as_deref_mut() {
            for r in &rows {
                writeln!(w, "{}", r.line())?;
            }
        }
        history.extend(rows);
        evaluations += 1;
        final_val_loss = vl;
        if stop.observe(vl, steps, cfg.min_delta) {
            best = Some(model.params.clone());
        } else if stop.since_improvement >= cfg.patience {
            break;
        }
    }
    if let Some(p) = best {
        model.params = p;
    }
    if let Some(dir) = checkpoint {
        model.save(dir)?;
    }
    Ok(FitReport {
        history,
        early_stop: stop,
        evaluations,
        epochs,
        steps,
        final_val_loss,
    })
}

#[cfg(test)]
mod tests;
