//! SGD training loop with the step learning-rate schedule and loss-based
//! early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, MultiFeatureImage};
use crate::net::{backward, forward, loss_xent, sgd_step, ModelParams};

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    /// Consecutive non-improving epochs tolerated before halting.
    pub patience: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            base_lr: 0.001,
            decay_factor: 0.1,
            decay_every: 15,
            batch_size: 32,
            patience: 5,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 || self.decay_factor <= 0.0 {
            return Err(Error::InvalidConfig(
                "base_lr and decay_factor must be > 0".into(),
            ));
        }
        if self.decay_every == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "decay_every and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Step schedule: `base_lr * decay_factor^(epoch / decay_every)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.base_lr * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

/// One prepared training sample: inputs already resized and normalized.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub cxr: GrayImage,
    pub mf: MultiFeatureImage,
    pub label: usize,
}

/// Per-epoch training history record (one JSON line each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub stop_loss: f64,
    /// Whether this epoch's parameters became the kept checkpoint.
    pub kept: bool,
}

/// Mean cross-entropy of `params` over a sample set.
pub fn mean_loss(params: &ModelParams, samples: &[TrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let (_, dist, _) = forward(params, &s.cxr, &s.mf)?;
        total += loss_xent(&dist, s.label);
    }
    Ok(total / samples.len() as f64)
}

/// Seeded-shuffle minibatch SGD with early stopping on the stop set's mean
/// loss. Returns the best-stop-loss parameters and the epoch history.
///
/// A zero-epoch config returns the initial parameters untouched. An empty
/// stop set falls back to monitoring the training loss.
pub fn train(
    init: ModelParams,
    train_set: &[TrainSample],
    stop_set: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochRecord>)> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok((init, Vec::new()));
    }
    if train_set.is_empty() {
        return Err(Error::EmptyInput("empty training set".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut params = init;
    let mut best: Option<(f64, ModelParams)> = None;
    let mut history = Vec::new();
    let mut since_improve = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&GrayImage, &MultiFeatureImage)> = chunk
                .iter()
                .map(|&i| (&train_set[i].cxr, &train_set[i].mf))
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set[i].label).collect();
            let (batch_loss, grad) = backward(&params, &batch, &labels)?;
            loss_sum += batch_loss * chunk.len() as f64;
            params = sgd_step(&params, &grad, lr)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let stop_loss = if stop_set.is_empty() {
            mean_loss(&params, train_set)?
        } else {
            mean_loss(&params, stop_set)?
        };

        let improved = best.as_ref().is_none_or(|(b, _)| stop_loss < *b);
        if improved {
            best = Some((stop_loss, params.clone()));
            since_improve = 0;
        } else {
            since_improve += 1;
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            stop_loss,
            kept: improved,
        });
        if since_improve > cfg.patience {
            break;
        }
    }

    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, history))
}
