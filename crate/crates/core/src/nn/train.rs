//! Mini-batch training with early stopping, and test-set evaluation.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cnn::{cycle_to_chw, CnnModel};
use super::layers::{cross_entropy, softmax, softmax_ce_grad};
use super::metrics::{self, Metrics};
use super::param::{Adam, AdamConfig, Parameters};
use crate::lod::ContextVector;
use crate::session::{augment, AugmentConfig, CycleTensor};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Patience-based stopping rule on a validation loss sequence.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Feed the validation loss of 1-based `epoch`.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            StopDecision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

pub fn context_of(t: &CycleTensor) -> ContextVector {
    ContextVector {
        attention: t.attention,
        meditation: t.meditation,
    }
}

/// Mean cross-entropy and hard-label accuracy over a set.
pub fn loss_and_accuracy(model: &CnnModel, set: &[CycleTensor]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut hits = 0usize;
    for t in set {
        let p = model.predict_cycle(t);
        loss += cross_entropy(&p.probs, t.label.weights());
        if metrics::argmax(&p.probs) == t.label.dominant().index() {
            hits += 1;
        }
    }
    let n = set.len().max(1) as f64;
    (loss / n, hits as f64 / n)
}

/// One optimizer step over `batch`; returns the batch loss.
pub fn train_step(
    model: &mut CnnModel,
    adam: &mut Adam,
    batch: &[CycleTensor],
) -> Result<f64, TrainError> {
    model.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let aux_weight = model.lod.aux_sse_weight;
    let mut loss = 0.0;
    for t in batch {
        let cache = model.forward(&cycle_to_chw(t), &context_of(t));
        let probs = softmax(&cache.logits);
        let target = t.label.weights();
        loss += scale * cross_entropy(&probs, target);
        if aux_weight != 0.0 {
            loss += scale * aux_weight * model.pooling_sse(&cache);
        }
        let dlogits = softmax_ce_grad(&probs, target, scale);
        model.backward(&cache, &dlogits, aux_weight * scale, false);
    }
    if let Some(p) = model.params().into_iter().find(|p| !p.grad_is_finite()) {
        return Err(TrainError::NonFiniteGradient(p.name.clone()));
    }
    adam.step(model);
    Ok(loss)
}

/// Train until validation loss stalls for `patience` epochs or `max_epochs`
/// run out, then restore the best-validation weights.
pub fn train(
    model: &mut CnnModel,
    train_set: &[CycleTensor],
    val_set: &[CycleTensor],
    cfg: &TrainConfig,
    augmentation: Option<&AugmentConfig>,
) -> Result<History, TrainError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut adam = Adam::new(
        model,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut aug_counter: u64 = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<CycleTensor> = chunk
                .iter()
                .map(|&i| match augmentation {
                    Some(a) => {
                        aug_counter = aug_counter.wrapping_add(1);
                        augment(&train_set[i], a, aug_counter)
                    }
                    None => train_set[i].clone(),
                })
                .collect();
            train_loss += train_step(model, &mut adam, &batch)? * batch.len() as f64;
        }
        train_loss /= train_set.len() as f64;
        let (val_loss, val_accuracy) = loss_and_accuracy(model, val_set);
        info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} acc {val_accuracy:.4}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    *model = best;
    Ok(History {
        epochs,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best,
        stopped_early,
    })
}

/// Test metrics; soft labels are hardened to their dominant state.
pub fn evaluate(model: &CnnModel, test_set: &[CycleTensor]) -> Result<Metrics, TrainError> {
    let probs: Vec<Vec<f64>> = test_set
        .iter()
        .map(|t| model.predict_cycle(t).probs)
        .collect();
    let truth: Vec<usize> = test_set
        .iter()
        .map(|t| t.label.dominant().index())
        .collect();
    metrics::evaluate(&probs, &truth).ok_or(TrainError::EmptyDataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_rule_instance() {
        let mut s = EarlyStopping::new(10);
        let losses = [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9];
        let mut stop_at = None;
        for (i, &l) in losses.iter().enumerate() {
            if s.observe(i + 1, l) == StopDecision::Stop {
                stop_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stop_at, Some(12));
        assert_eq!(s.best_epoch, 2);
    }
}
