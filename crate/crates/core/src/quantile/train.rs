use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::QuantileHead;
use super::levels::QuantileLevels;
use crate::corpus::ScoredExample;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Every position regresses on the observed end score.
    Mc,
    /// Every position regresses on the next position's predictions.
    Td0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs without a validation improvement of at least
    /// `plateau_tolerance` before the learning rate is halved.
    pub patience: usize,
    pub plateau_tolerance: f64,
    pub huber_k: f64,
    pub hidden: usize,
    /// Share of the dataset held out (fixed split) for the plateau schedule.
    pub validation_fraction: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Mc,
            batch_size: 20,
            epochs: 25,
            learning_rate: 1e-4,
            patience: 2,
            plateau_tolerance: 1e-5,
            huber_k: 0.001,
            hidden: QuantileHead::DEFAULT_HIDDEN,
            validation_fraction: 0.1,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.batch_size > 0
            && self.epochs > 0
            && self.learning_rate > 0.0
            && self.patience > 0
            && self.plateau_tolerance >= 0.0
            && self.huber_k > 0.0
            && self.hidden > 0
            && self.adam_eps > 0.0;
        if !positive {
            return Err(Error::Config("training hyperparameters must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sentence loss over the training split.
    pub train_loss: f64,
    /// Mean per-sentence loss over the validation split (training split when
    /// there is no validation split).
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Final head, or the last finite one when training diverged.
    pub head: QuantileHead,
    pub log: Vec<EpochLog>,
    /// Diagnostic when training stopped on non-finite values.
    pub diverged: Option<String>,
}

pub fn train_mc(dataset: &[ScoredExample], channel: &str, config: &TrainConfig) -> Result<TrainReport> {
    train(dataset, channel, &TrainConfig { method: Method::Mc, ..config.clone() })
}

pub fn train_td0(dataset: &[ScoredExample], channel: &str, config: &TrainConfig) -> Result<TrainReport> {
    train(dataset, channel, &TrainConfig { method: Method::Td0, ..config.clone() })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Per-sentence loss and gradient under the configured method.
fn example_grad(head: &QuantileHead, ex: &ScoredExample, channel: &str, cfg: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    let y = ex.score(channel)?;
    let mut grad = vec![0.0; head.param_count()];
    let loss = match cfg.method {
        Method::Mc => head.accumulate_mc(&ex.features, y, cfg.huber_k, &mut grad)?,
        Method::Td0 => head.accumulate_td0(&ex.features, y, cfg.huber_k, &mut grad)?,
    };
    Ok((loss, grad))
}

fn mean_loss(head: &QuantileHead, set: &[&ScoredExample], channel: &str, cfg: &TrainConfig) -> Result<f64> {
    let losses: Vec<f64> = set
        .par_iter()
        .map(|ex| {
            let y = ex.score(channel)?;
            match cfg.method {
                Method::Mc => head.loss(&ex.features, y, cfg.huber_k),
                Method::Td0 => {
                    let mut scratch = vec![0.0; head.param_count()];
                    head.accumulate_td0(&ex.features, y, cfg.huber_k, &mut scratch)
                }
            }
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Trains a fresh head with Adam and the plateau-halving schedule.
///
/// Per-sentence gradients are computed in parallel but always summed in
/// batch order, so results are bitwise reproducible for a given seed.
pub fn train(dataset: &[ScoredExample], channel: &str, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::Domain("training set is empty".into()))?;
    let dim = first.features.dim();
    for ex in dataset {
        if ex.features.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: ex.features.dim(),
            });
        }
        ex.score(channel)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((dataset.len() as f64) * config.validation_fraction).floor() as usize;
    let n_val = n_val.min(dataset.len() - 1);
    let (train_idx, val_idx) = order.split_at(dataset.len() - n_val);
    let mut train_idx = train_idx.to_vec();
    let val_set: Vec<&ScoredExample> = val_idx.iter().map(|&i| &dataset[i]).collect();

    let mut head = QuantileHead::new(dim, config.hidden, QuantileLevels::standard(), channel, config.seed);
    let mut adam = Adam::new(head.param_count());
    let mut lr = config.learning_rate;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let results: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| example_grad(&head, &dataset[i], channel, config))
                .collect();
            let mut grad = vec![0.0; head.param_count()];
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = match r {
                    Ok(v) => v,
                    Err(Error::Train(msg)) => return Ok(diverged(head, log, epoch, msg)),
                    Err(e) => return Err(e),
                };
                batch_loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Ok(diverged(head, log, epoch, "non-finite loss or gradient".into()));
            }
            let previous = head.params().to_vec();
            adam.step(head.params_mut(), &grad, lr, config);
            if head.params().iter().any(|p| !p.is_finite()) {
                head.params_mut().copy_from_slice(&previous);
                return Ok(diverged(head, log, epoch, "non-finite parameters after update".into()));
            }
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / train_idx.len() as f64;
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            match mean_loss(&head, &val_set, channel, config) {
                Ok(v) => v,
                Err(Error::Train(msg)) => return Ok(diverged(head, log, epoch, msg)),
                Err(e) => return Err(e),
            }
        };
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            learning_rate: lr,
        });
        if best - val_loss < config.plateau_tolerance {
            stale += 1;
            if stale >= config.patience {
                lr *= 0.5;
                stale = 0;
            }
        } else {
            stale = 0;
        }
        best = best.min(val_loss);
    }
    Ok(TrainReport {
        head,
        log,
        diverged: None,
    })
}

fn diverged(head: QuantileHead, log: Vec<EpochLog>, epoch: usize, msg: String) -> TrainReport {
    TrainReport {
        head,
        log,
        diverged: Some(format!("epoch {}: {msg}", epoch + 1)),
    }
}
