//! Mini-batch Adam training with early stopping on validation loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dropout::Mode;
use crate::numerics::optim::{clip_global_norm, AdamConfig, AdamState};
use crate::numerics::params::{l2_penalty_node, ParamSet};
use crate::numerics::tape::{Tape, Var};
use crate::preprocess::{split_indices, FeatureMatrix, N_CLASSES};
use crate::seed::{rng_for, Rng};

/// Running-statistics momentum for batch normalisation (weight on the old value).
pub const NORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Stop as soon as an epoch's training accuracy reaches this value,
    /// keeping that epoch's weights. Used for overfit checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 250,
            patience: 10,
            learning_rate: 1e-4,
            validation_fraction: 0.1,
            clip_norm: None,
            seed: 42,
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if matches!(self.target_train_accuracy, Some(a) if !(a > 0.0 && a <= 1.0)) {
            return Err(Error::Config("target_train_accuracy must lie in (0, 1]".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// A batch-norm node whose batch statistics feed running buffers.
#[derive(Debug, Clone, Copy)]
pub struct NormUpdate {
    pub node: Var,
    pub mean_param: usize,
    pub var_param: usize,
}

pub struct Forward {
    /// `N×3` class probabilities.
    pub probs: Var,
    pub norm_updates: Vec<NormUpdate>,
}

/// A differentiable classifier over flattened `channels × samples` windows.
pub trait Network {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn l2_coefficient(&self) -> f64;
    /// Window geometry `(channels, samples)` the network expects.
    fn input_shape(&self) -> (usize, usize);
    /// Builds the forward pass for `n` rows of `x` (each `channels · samples` long).
    fn forward(&self, tape: &mut Tape, vars: &[Var], x: &[f64], n: usize, mode: Mode, rng: &mut Rng) -> Result<Forward>;

    /// Class probabilities in evaluation mode, computed in chunks.
    fn predict_proba(&self, x: &[f64], n: usize) -> Result<Vec<[f64; N_CLASSES]>> {
        let (c, t) = self.input_shape();
        let width = c * t;
        if x.len() != n * width {
            return Err(Error::Shape(format!(
                "expected {n} rows of {c}×{t} = {width} values, got {}",
                x.len()
            )));
        }
        let mut out = Vec::with_capacity(n);
        let mut rng = rng_for(0, "eval");
        for start in (0..n).step_by(64) {
            let end = (start + 64).min(n);
            let mut tape = Tape::new();
            let vars = self.params().bind(&mut tape);
            let fwd = self.forward(&mut tape, &vars, &x[start * width..end * width], end - start, Mode::Eval, &mut rng)?;
            for row in tape.value(fwd.probs).data().chunks_exact(N_CLASSES) {
                out.push([row[0], row[1], row[2]]);
            }
        }
        Ok(out)
    }
}

/// Cross-entropy + L2 for one batch; returns `(loss node, probabilities, norm updates)`.
pub fn batch_loss<N: Network + ?Sized>(
    net: &N,
    tape: &mut Tape,
    vars: &[Var],
    x: &[f64],
    labels: &[usize],
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Var, Forward)> {
    let fwd = net.forward(tape, vars, x, labels.len(), mode, rng)?;
    let ce = tape.cross_entropy(fwd.probs, labels)?;
    let loss = match l2_penalty_node(tape, net.params(), vars, net.l2_coefficient())? {
        Some(p) => tape.add(ce, p)?,
        None => ce,
    };
    Ok((loss, fwd))
}

/// Loss on all of `data` before and after each of `steps` full-batch Adam
/// steps. Dropout redraws the same mask every step, so the objective stays
/// fixed and the sequence should not increase for a small learning rate.
pub fn full_batch_losses<N: Network>(
    net: &mut N,
    data: &FeatureMatrix,
    learning_rate: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let labels: Vec<usize> = data.y.iter().map(|&l| l as usize).collect();
    let mut adam = AdamState::new(AdamConfig { learning_rate, ..Default::default() }, net.params());
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let mut tape = Tape::new();
        let vars = net.params().bind(&mut tape);
        let mut rng = rng_for(seed, "smoke-dropout");
        let (loss, _) = batch_loss(&*net, &mut tape, &vars, &data.x, &labels, Mode::Train, &mut rng)?;
        losses.push(tape.value(loss).data()[0]);
        if step == steps {
            break;
        }
        let mut grads = tape.backward(loss)?;
        let per_param: Vec<_> = vars
            .iter()
            .zip(net.params().iter())
            .map(|(&v, p)| if p.trainable() { grads.take(v) } else { None })
            .collect();
        adam.step(net.params_mut(), &per_param)?;
    }
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Eval-mode accuracy on the training split, measured only when a
    /// target accuracy is configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_accuracy: Option<f64>,
}

/// Anything that can be trained one epoch at a time and rolled back.
pub trait EpochLearner {
    type Snapshot;
    fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
}

/// Runs epochs `1..=max_epochs`, keeping the weights of the epoch with the
/// lowest validation loss. Training stops once `patience` further epochs
/// beyond the first non-improving one have passed without a new best, i.e.
/// at the first epoch `e` with `e - best_epoch > patience`.
///
/// A non-finite loss restores the best weights seen so far and returns a
/// training error.
pub fn fit_with_early_stopping<L: EpochLearner>(
    learner: &mut L,
    max_epochs: usize,
    patience: usize,
) -> Result<FitOutcome> {
    fit_until(learner, max_epochs, patience, None)
}

/// As [`fit_with_early_stopping`], but an epoch whose training accuracy
/// reaches `target` ends the run with its own weights kept.
pub fn fit_until<L: EpochLearner>(
    learner: &mut L,
    max_epochs: usize,
    patience: usize,
    target: Option<f64>,
) -> Result<FitOutcome> {
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, L::Snapshot)> = None;
    let mut stopped = 0;
    for epoch in 1..=max_epochs {
        let rec = match learner.run_epoch(epoch) {
            Ok(r) if r.train_loss.is_finite() && r.val_loss.is_finite() => r,
            Ok(r) => {
                if let Some((_, _, snap)) = best.take() {
                    learner.restore(snap);
                }
                return Err(Error::Training(format!(
                    "loss diverged at epoch {epoch} (train {}, val {}); restored last good weights",
                    r.train_loss, r.val_loss
                )));
            }
            Err(e) => {
                if let Some((_, _, snap)) = best.take() {
                    learner.restore(snap);
                }
                return Err(e);
            }
        };
        let val = rec.val_loss;
        let reached = target.is_some_and(|t| rec.fit_accuracy.unwrap_or(rec.train_accuracy) >= t);
        history.push(rec);
        stopped = epoch;
        if reached {
            return Ok(FitOutcome { history, best_epoch: epoch, best_val_loss: val, stopped_epoch: epoch });
        }
        let improved = best.as_ref().map_or(true, |(_, b, _)| val < *b);
        if improved {
            best = Some((epoch, val, learner.snapshot()));
        } else if epoch - best.as_ref().unwrap().0 > patience {
            break;
        }
    }
    let (best_epoch, best_val_loss, snap) = best.ok_or_else(|| Error::Training("no epochs run".into()))?;
    learner.restore(snap);
    Ok(FitOutcome { history, best_epoch, best_val_loss, stopped_epoch: stopped })
}

struct NetLearner<'a, N: Network> {
    net: &'a mut N,
    adam: AdamState,
    train: FeatureMatrix,
    val: FeatureMatrix,
    config: &'a TrainConfig,
    order_rng: Rng,
    dropout_rng: Rng,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

impl<N: Network> NetLearner<'_, N> {
    fn evaluate(&mut self, on_train: bool) -> Result<(f64, f64)> {
        let data = if on_train { &self.train } else { &self.val };
        let n = data.n_rows();
        let width = data.n_cols();
        let mut loss = 0.0;
        let mut correct = 0;
        for start in (0..n).step_by(self.config.batch_size) {
            let end = (start + self.config.batch_size).min(n);
            let labels: Vec<usize> = data.y[start..end].iter().map(|&l| l as usize).collect();
            let mut tape = Tape::new();
            let vars = self.net.params().bind(&mut tape);
            let x = &data.x[start * width..end * width];
            let (l, fwd) = batch_loss(&*self.net, &mut tape, &vars, x, &labels, Mode::Eval, &mut self.dropout_rng)?;
            loss += tape.value(l).data()[0] * labels.len() as f64;
            for (row, &y) in tape.value(fwd.probs).data().chunks_exact(N_CLASSES).zip(&labels) {
                correct += usize::from(argmax(row) == y);
            }
        }
        Ok((loss / n as f64, correct as f64 / n as f64))
    }
}

impl<N: Network> EpochLearner for NetLearner<'_, N> {
    type Snapshot = ParamSet;

    fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let n = self.train.n_rows();
        let width = self.train.n_cols();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.order_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(self.config.batch_size) {
            let mut x = Vec::with_capacity(batch.len() * width);
            for &i in batch {
                x.extend_from_slice(self.train.row(i));
            }
            let labels: Vec<usize> = batch.iter().map(|&i| self.train.y[i] as usize).collect();
            let mut tape = Tape::new();
            let vars = self.net.params().bind(&mut tape);
            let (loss, fwd) =
                batch_loss(&*self.net, &mut tape, &vars, &x, &labels, Mode::Train, &mut self.dropout_rng)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += lv * batch.len() as f64;
            for (row, &y) in tape.value(fwd.probs).data().chunks_exact(N_CLASSES).zip(&labels) {
                correct += usize::from(argmax(row) == y);
            }
            let mut grads = tape.backward(loss)?;
            let mut per_param: Vec<_> = vars
                .iter()
                .zip(self.net.params().iter())
                .map(|(&v, p)| if p.trainable() { grads.take(v) } else { None })
                .collect();
            if let Some(c) = self.config.clip_norm {
                clip_global_norm(&mut per_param, c);
            }
            self.adam.step(self.net.params_mut(), &per_param)?;
            for up in &fwd.norm_updates {
                if let Some((mean, var)) = tape.batch_stats(up.node) {
                    let params = self.net.params_mut();
                    for (r, b) in params.get_mut(up.mean_param).value.data_mut().iter_mut().zip(mean) {
                        *r = NORM_MOMENTUM * *r + (1.0 - NORM_MOMENTUM) * b;
                    }
                    for (r, b) in params.get_mut(up.var_param).value.data_mut().iter_mut().zip(var) {
                        *r = NORM_MOMENTUM * *r + (1.0 - NORM_MOMENTUM) * b;
                    }
                }
            }
        }
        let (val_loss, val_accuracy) = self.evaluate(false)?;
        let fit_accuracy = match self.config.target_train_accuracy {
            Some(_) => Some(self.evaluate(true)?.1),
            None => None,
        };
        Ok(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            val_loss,
            val_accuracy,
            fit_accuracy,
        })
    }

    fn snapshot(&self) -> ParamSet {
        self.net.params().clone()
    }

    fn restore(&mut self, snapshot: ParamSet) {
        *self.net.params_mut() = snapshot;
    }
}

/// Trains `net` in place on `data`, holding out a stratified validation split
/// for early stopping. On success the network carries the best-validation weights.
pub fn train<N: Network>(net: &mut N, data: &FeatureMatrix, config: &TrainConfig) -> Result<FitOutcome> {
    config.validate()?;
    if data.n_rows() == 0 {
        return Err(Error::EmptyInput("no training rows".into()));
    }
    if (data.n_channels, data.n_samples) != net.input_shape() {
        return Err(Error::Shape(format!(
            "data windows are {}×{}, network expects {:?}",
            data.n_channels,
            data.n_samples,
            net.input_shape()
        )));
    }
    let (train_idx, val_idx) = split_indices(&data.y, config.validation_fraction, config.seed, true)?;
    if val_idx.is_empty() {
        return Err(Error::Stratification("validation split is empty".into()));
    }
    let train = data.select(&train_idx);
    let val = data.select(&val_idx);
    let counts = data.class_counts();
    let train_counts = train.class_counts();
    for c in 0..N_CLASSES {
        if counts[c] > 0 && train_counts[c] == 0 {
            return Err(Error::Stratification(format!("class {c} missing from the training split")));
        }
    }
    let adam = AdamState::new(AdamConfig { learning_rate: config.learning_rate, ..Default::default() }, net.params());
    let mut learner = NetLearner {
        net,
        adam,
        train,
        val,
        config,
        order_rng: rng_for(config.seed, "epoch-order"),
        dropout_rng: rng_for(config.seed, "dropout"),
    };
    fit_until(&mut learner, config.max_epochs, config.patience, config.target_train_accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted {
        losses: Vec<f64>,
        weights: usize,
    }

    impl EpochLearner for Scripted {
        type Snapshot = usize;
        fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
            self.weights = epoch;
            let l = self.losses[epoch - 1];
            let train_accuracy = epoch as f64 / 10.0;
            Ok(EpochRecord { epoch, train_loss: 1.0, train_accuracy, val_loss: l, val_accuracy: 0.0, fit_accuracy: None })
        }
        fn snapshot(&self) -> usize {
            self.weights
        }
        fn restore(&mut self, s: usize) {
            self.weights = s;
        }
    }

    #[test]
    fn patience_one_stops_at_third_epoch() {
        let mut l = Scripted { losses: vec![1.0, 1.1, 1.2, 1.3, 1.4, 1.5], weights: 0 };
        let out = fit_with_early_stopping(&mut l, 6, 1).unwrap();
        assert_eq!(out.stopped_epoch, 3);
        assert_eq!(out.best_epoch, 1);
        assert_eq!(l.weights, 1);
    }

    #[test]
    fn best_epoch_is_never_worse_than_any_seen() {
        let losses = vec![2.0, 1.5, 1.7, 1.4, 1.6, 1.65, 1.8, 1.9, 2.0, 2.1];
        let mut l = Scripted { losses: losses.clone(), weights: 0 };
        let out = fit_with_early_stopping(&mut l, 10, 2).unwrap();
        let seen = &losses[..out.stopped_epoch];
        assert!(seen.iter().all(|&v| out.best_val_loss <= v));
        assert_eq!(out.best_epoch, 4);
        assert_eq!(out.stopped_epoch, 7);
    }

    #[test]
    fn divergence_restores_best() {
        let mut l = Scripted { losses: vec![1.0, 0.5, f64::NAN], weights: 0 };
        let err = fit_with_early_stopping(&mut l, 5, 3).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
        assert_eq!(l.weights, 2);
    }

    #[test]
    fn target_accuracy_keeps_current_weights() {
        let mut l = Scripted { losses: vec![1.0, 1.1, 1.2, 1.3, 1.4], weights: 0 };
        let out = fit_until(&mut l, 5, 10, Some(0.3)).unwrap();
        assert_eq!((out.stopped_epoch, out.best_epoch, l.weights), (3, 3, 3));
    }
}
