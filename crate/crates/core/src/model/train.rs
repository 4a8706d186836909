use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{BicError, Result};
use crate::numerics::{derive_seed, rng_from, step_optimizer, AdamWConfig, OptimState, Real, Tape, Tensor};
use crate::text::Ctx;

use super::{evaluate, prepare_inputs, BicModel, UserInput};

/// Users per tape inside a minibatch. Fixed so results do not depend on the
/// number of worker threads.
const SUB_BATCH: usize = 16;

/// Reduce-on-plateau for a metric that should increase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        PlateauScheduler { factor, patience, best: None, bad_epochs: 0 }
    }

    /// Records `metric` and returns the learning rate to use next.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}

/// Stops after `patience` consecutive epochs without improvement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    counter: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, counter: 0 }
    }

    /// Returns `(improved, stop)`.
    pub fn step(&mut self, metric: f64) -> (bool, bool) {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.counter = 0;
            (true, false)
        } else {
            self.counter += 1;
            (false, self.counter >= self.patience)
        }
    }

    pub fn counter(&self) -> usize {
        self.counter
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<R> {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: BicModel<R>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

type Grads<R> = Vec<Option<Tensor<R>>>;

fn sub_batch_grads<R: Real>(
    model: &BicModel<R>,
    batch: &[&UserInput<R>],
    weight: f64,
    with_l2: bool,
    seed: u64,
) -> Result<(f64, Grads<R>)> {
    let mut tape = Tape::new();
    let b = model.params.bind(&mut tape);
    let mut rng = rng_from(seed);
    let mut ctx = Ctx {
        dropout: model.config.dropout,
        rng: Some(&mut rng),
        slope: model.config.leaky_slope,
        ln_eps: model.config.ln_eps,
        per_head: false,
    };
    let loss = model.objective(&mut tape, &b, batch, R::lit(weight), with_l2, &mut ctx)?;
    let value = tape.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(BicError::Numeric { param: "loss".into(), message: format!("loss became {value}") });
    }
    let mut grads = tape.backward(loss)?;
    Ok((value, b.collect(&mut grads)))
}

fn accumulate<R: Real>(total: &mut Grads<R>, part: Grads<R>) {
    for (t, p) in total.iter_mut().zip(part) {
        match (t.as_mut(), p) {
            (Some(t), Some(p)) => t.data_mut().iter_mut().zip(p.data()).for_each(|(a, &b)| *a += b),
            (None, Some(p)) => *t = Some(p),
            _ => {}
        }
    }
}

/// Gradients of the full minibatch objective, summed in a fixed order.
fn batch_grads<R: Real>(model: &BicModel<R>, batch: &[&UserInput<R>], seed: u64) -> Result<(f64, Grads<R>)> {
    let n = batch.len() as f64;
    let jobs: Vec<(usize, &[&UserInput<R>])> = batch.chunks(SUB_BATCH).enumerate().collect();
    let run = |(i, sub): &(usize, &[&UserInput<R>])| {
        sub_batch_grads(model, sub, sub.len() as f64 / n, *i == 0, derive_seed(seed, &[*i as u64]))
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<(f64, Grads<R>)>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<(f64, Grads<R>)>> = jobs.iter().map(run).collect();

    let mut loss = 0.0;
    let mut total: Grads<R> = vec![None; model.params.len()];
    for p in parts {
        let (l, g) = p?;
        loss += l;
        accumulate(&mut total, g);
    }
    Ok((loss, total))
}

/// Trains on the dataset's train split with minibatch RAdamW, a plateau
/// scheduler on validation accuracy and early stopping; returns the
/// best-validation parameters.
pub fn train<R: Real>(model: BicModel<R>, dataset: &Dataset) -> Result<TrainOutcome<R>> {
    let cfg = model.config.clone();
    let train_ids = dataset.split_ids("train")?;
    if train_ids.is_empty() {
        return Err(BicError::Config("train split is empty".into()));
    }
    let val_ids = dataset.split_ids("val")?;
    if val_ids.is_empty() {
        return Err(BicError::Config("validation split is empty".into()));
    }
    let train_in: Vec<UserInput<R>> = prepare_inputs(dataset, train_ids, &cfg, &model.spec)?;
    let val_in: Vec<UserInput<R>> = prepare_inputs(dataset, val_ids, &cfg, &model.spec)?;
    train_prepared(model, &train_in, &val_in)
}

/// [`train`] on already prepared inputs.
pub fn train_prepared<R: Real>(
    mut model: BicModel<R>,
    train_in: &[UserInput<R>],
    val_in: &[UserInput<R>],
) -> Result<TrainOutcome<R>> {
    let cfg = model.config.clone();
    if train_in.is_empty() {
        return Err(BicError::Config("train split is empty".into()));
    }
    let mut opt = OptimState::new(
        &model.params,
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            rectify: cfg.rectify,
            ..AdamWConfig::default()
        },
    );
    let mut sched = PlateauScheduler::new(cfg.lr_factor, cfg.lr_patience);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let active = model.active_params().to_vec();
    let mut best = model.params.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_in.len()).collect();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng_from(derive_seed(cfg.seed, &[epoch as u64, 0x5eed])));
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&UserInput<R>> = idx.iter().map(|&i| &train_in[i]).collect();
            let seed = derive_seed(cfg.seed, &[epoch as u64, bi as u64]);
            let (loss, mut grads) = batch_grads(&model, &batch, seed)?;
            for &id in &active {
                let g = &mut grads[id.index()];
                if g.is_none() {
                    let [r, c] = model.params.get(id).shape();
                    *g = Some(Tensor::zeros(r, c));
                }
            }
            step_optimizer(&mut model.params, &grads, &active, &mut opt)?;
            loss_sum += loss * batch.len() as f64;
        }
        let val = evaluate(&model, val_in)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_in.len() as f64,
            val_accuracy: val.accuracy,
            val_f1: val.f1,
            lr: opt.lr(),
        });
        let (improved, stop) = stopper.step(val.accuracy);
        if improved {
            best = model.params.clone();
            best_epoch = epoch;
        }
        let lr = sched.step(val.accuracy, opt.lr());
        opt.set_lr(lr);
        if stop {
            stopped_early = true;
            break;
        }
    }
    model.params = best;
    Ok(TrainOutcome { model, history, best_epoch, stopped_early })
}
