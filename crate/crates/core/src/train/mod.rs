//! MSE objective, mini-batch optimization with a stepped learning-rate
//! schedule, early stopping on validation loss, and training history.

mod optim;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{forward_nodes, ModelParams, WindowSample};
use crate::numcore::{Graph, Matrix, NodeId};
use crate::scalar::Scalar;

pub use optim::{clip_global_norm, global_norm, Optimizer, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub shuffle: bool,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr0: 1e-3,
            lr_decay: 0.7,
            decay_every: 5,
            max_epochs: 200,
            patience: 10,
            optimizer: Optimizer::default(),
            seed: 0,
            shuffle: true,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| {
            Err(Error::Config {
                key: format!("train.{key}"),
                msg,
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0", format!("must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay", format!("must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.decay_every == 0 {
            return bad("decay_every", "must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1".into());
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad("patience", format!("must lie in [1, max_epochs], got {}", self.patience));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm", format!("must be positive, got {c}"));
            }
        }
        self.optimizer.validate()
    }

    /// `lr0 · decay^⌊epoch / decay_every⌋` for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Mean per-sample training loss seen during each epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    /// 0-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.val_loss.len()
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.val_loss.get(self.best_epoch).copied()
    }

    /// `epoch,train_loss,val_loss,lr` with 0-based epochs.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_loss,lr")?;
        for e in 0..self.epochs() {
            writeln!(out, "{e},{},{},{}", self.train_loss[e], self.val_loss[e], self.lr[e])?;
        }
        Ok(())
    }
}

/// `(1/N) Σ (pred_i − target_i)²` for an `N × 1` prediction node.
pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, pred: NodeId, target: &[T]) -> Result<NodeId> {
    let (rows, cols) = g.shape(pred);
    if cols != 1 || rows != target.len() {
        return Err(Error::contract(format!(
            "prediction shape ({rows}, {cols}) does not match target length {}",
            target.len()
        )));
    }
    let t = g.constant(Matrix::column(target));
    let d = g.sub(pred, t)?;
    let sq = g.mul(d, d)?;
    g.mean_all(sq)
}

/// Plain MSE of two slices.
pub fn mse<T: Scalar>(pred: &[T], target: &[T]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::contract(format!(
            "mse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t).as_f64().powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Loss on one sample and its gradient for every tensor in manifest order.
pub fn loss_and_grad<T: Scalar>(params: &ModelParams<T>, sample: &WindowSample<T>) -> Result<(f64, Vec<Matrix<T>>)> {
    let mut g = Graph::new();
    let nodes = params.register(&mut g);
    let f = forward_nodes(&mut g, &params.meta, &nodes, sample)?;
    let loss = mse_loss(&mut g, f.prediction, &sample.target)?;
    let value = g.value(loss).item()?.as_f64();
    let mut grads = g.backward(loss)?;
    let out = nodes
        .ids()
        .iter()
        .map(|id| grads.take(*id).expect("registered parameter"))
        .collect();
    Ok((value, out))
}

/// Loss of one sample without building gradients.
pub fn sample_loss<T: Scalar>(params: &ModelParams<T>, sample: &WindowSample<T>) -> Result<f64> {
    let out = crate::model::forward(sample, params)?;
    mse(&out.prediction, &sample.target)
}

/// Mean per-sample MSE; the reduction runs in sample order.
pub fn mean_loss<T: Scalar>(params: &ModelParams<T>, samples: &[WindowSample<T>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("cannot evaluate the loss of an empty split"));
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| sample_loss(params, s))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean loss and mean gradient over a batch, reduced in batch order.
pub fn batch_loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[&WindowSample<T>],
) -> Result<(f64, Vec<Matrix<T>>)> {
    let parts: Vec<(f64, Vec<Matrix<T>>)> = batch
        .par_iter()
        .map(|s| loss_and_grad(params, s))
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grad) = iter.next().ok_or_else(|| Error::contract("empty batch"))?;
    for (l, g) in iter {
        loss += l;
        for (acc, part) in grad.iter_mut().zip(&g) {
            acc.add_assign(part)?;
        }
    }
    let count = batch.len();
    let inv = T::one() / T::from_usize_lossy(count);
    for g in &mut grad {
        for v in g.as_mut_slice() {
            *v *= inv;
        }
    }
    Ok((loss / count as f64, grad))
}

/// Result of [`train`]: the best-validation parameters and the run history.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub history: TrainHistory,
}

/// Mini-batch training from `init`, keeping the parameters with the lowest
/// validation loss. Stops once validation loss has not improved for
/// `patience` epochs.
pub fn train<T: Scalar>(dataset: &WindowedDataset<T>, init: ModelParams<T>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(dataset, init, cfg, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with<T: Scalar, F>(
    dataset: &WindowedDataset<T>,
    init: ModelParams<T>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome<T>>
where
    F: FnMut(usize, &TrainHistory),
{
    cfg.validate()?;
    let train_set = dataset.split(Split::Train);
    let val_set = dataset.split(Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::contract(format!(
            "training needs non-empty train and validation splits (got {} and {})",
            train_set.len(),
            val_set.len()
        )));
    }
    if let Some(s) = train_set.first() {
        s.check(&init.meta)?;
    }

    let mut params = init;
    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|m| m.shape()).collect();
    let mut opt = OptimizerState::new(cfg.optimizer, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WindowSample<T>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_loss_and_grad(&params, &batch)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b });
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            opt.apply(&mut params.tensors_mut(), &grads, lr);
            loss_sum += loss * batch.len() as f64;
        }
        let val = mean_loss(&params, val_set)?;
        if !val.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
            });
        }
        history.train_loss.push(loss_sum / train_set.len() as f64);
        history.val_loss.push(val);
        history.lr.push(lr);
        if val < best_loss {
            best_loss = val;
            best = params.clone();
            history.best_epoch = epoch;
        }
        on_epoch(epoch, &history);
        if epoch - history.best_epoch >= cfg.patience {
            history.stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }
    Ok(TrainOutcome { params: best, history })
}
