//! Minibatch training loop shared by every network.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::diffcore::{adam_step, AdamConfig, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::ingest::{Split, WindowedDataset};
use crate::rng::{streams, Rng};

const VAL_CHUNK: usize = 2048;

pub(crate) trait Objective {
    const NAME: &'static str;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Mean loss over the rows of the batch.
    fn loss(&self, tape: &mut Tape, x: &Array2<f64>, y: &Array2<f64>, rng: &mut Rng) -> Result<Var>;
}

/// Per-epoch losses and the epoch whose parameters were kept.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

/// Training and validation matrices in standardized units.
pub(crate) struct TrainData {
    pub x_train: Array2<f64>,
    pub y_train: Array2<f64>,
    pub x_val: Array2<f64>,
    pub y_val: Array2<f64>,
}

impl TrainData {
    pub fn from_dataset(ds: &WindowedDataset) -> Self {
        Self {
            x_train: ds.x_split(Split::Train),
            y_train: ds.y_split(Split::Train),
            x_val: ds.x_split(Split::Val),
            y_val: ds.y_split(Split::Val),
        }
    }
}

pub(crate) fn model_stream(purpose: u64, model: u64) -> u64 {
    streams::derive(purpose, 0, model)
}

fn eval_loss<M: Objective>(model: &M, x: &Array2<f64>, y: &Array2<f64>, rng: &mut Rng) -> Result<f64> {
    let n = x.nrows();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + VAL_CHUNK).min(n);
        let xs = x.slice(ndarray::s![start..end, ..]).to_owned();
        let ys = y.slice(ndarray::s![start..end, ..]).to_owned();
        let mut tape = Tape::frozen();
        let l = model.loss(&mut tape, &xs, &ys, rng)?;
        total += tape.scalar(l) * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Adam over shuffled minibatches; parameters from the epoch with the lowest
/// validation loss are restored at the end.
pub(crate) fn fit<M: Objective>(model: &mut M, model_id: u64, data: &TrainData, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let n = data.x_train.nrows();
    if n == 0 || data.x_val.nrows() == 0 {
        return Err(Error::InsufficientData(format!("{} needs training and validation rows", M::NAME)));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut shuffle = Rng::stream(cfg.seed, model_stream(streams::SHUFFLE, model_id));
    let mut noise = Rng::stream(cfg.seed, model_stream(streams::NOISE, model_id));
    let val_seed = model_stream(streams::VALIDATION, model_id);

    let mut history = TrainHistory::default();
    let mut best = f64::INFINITY;
    let mut best_params = model.store().snapshot();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let xb = data.x_train.select(Axis(0), chunk);
            let yb = data.y_train.select(Axis(0), chunk);
            let mut tape = Tape::new();
            let l = model.loss(&mut tape, &xb, &yb, &mut noise)?;
            let v = tape.scalar(l);
            if !v.is_finite() {
                return Err(Error::Diverged { model: M::NAME, epoch });
            }
            sum += v * chunk.len() as f64;
            tape.backward(l)?.accumulate_into(model.store_mut())?;
            adam_step(model.store_mut(), &adam).map_err(|e| match e {
                Error::NonFiniteGradient(_) => Error::Diverged { model: M::NAME, epoch },
                other => other,
            })?;
        }
        let mut val_rng = Rng::stream(cfg.seed, val_seed);
        let val = eval_loss(model, &data.x_val, &data.y_val, &mut val_rng)?;
        if !val.is_finite() {
            return Err(Error::Diverged { model: M::NAME, epoch });
        }
        history.train_loss.push(sum / n as f64);
        history.val_loss.push(val);
        if val < best {
            best = val;
            history.best_epoch = epoch;
            best_params = model.store().snapshot();
        }
        log::debug!("{} epoch {epoch}: train {:.5} val {val:.5}", M::NAME, sum / n as f64);
    }
    model.store_mut().restore(&best_params);
    Ok(history)
}
