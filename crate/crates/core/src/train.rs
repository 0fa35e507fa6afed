//! Seeded mini-batch training with validation-AUC early stopping.

use alloc::format;
use alloc::vec::Vec;

use crate::corpus::DatasetSplit;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport, ScoredExample};
use crate::model::{Example, ModelAssembly};
use crate::optim::{Optimizer, OptimizerState};
use crate::params::ParamGroups;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            optimizer: Optimizer::adam(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if self.max_epochs > 0 && (self.patience == 0 || self.patience > self.max_epochs) {
            return Err(Error::InvalidConfig(format!(
                "patience must be in 1..={} (got {})",
                self.max_epochs, self.patience
            )));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return bad("adam needs β1, β2 in [0, 1) and ε > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` when no epoch ran.
    pub selected_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn selected(&self) -> Option<&EpochRecord> {
        self.selected_epoch.map(|e| &self.epochs[e])
    }
}

pub fn score_examples(model: &ModelAssembly, examples: &[Example]) -> Result<Vec<ScoredExample>> {
    examples
        .iter()
        .map(|ex| Ok(ScoredExample::new(model.forward(&ex.input)?, ex.label)))
        .collect()
}

pub fn evaluate_model(model: &ModelAssembly, examples: &[Example]) -> Result<MetricsReport> {
    metrics::evaluate(&score_examples(model, examples)?)
}

/// Trains on `split.train`, scores `split.validation` after every epoch and
/// returns the parameters of the epoch with the highest validation AUC
/// (earliest on ties). Stops after `patience` epochs without a strict
/// improvement. `on_epoch` sees every record as it is produced.
pub fn train_model(
    assembly: &ModelAssembly,
    split: &DatasetSplit<Example>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelAssembly, TrainHistory)> {
    config.validate()?;
    if split.train.is_empty() || split.validation.is_empty() || split.test.is_empty() {
        return Err(Error::Empty("train, validation and test splits"));
    }
    let has = |label| split.validation.iter().any(|e| e.label == label);
    if !has(0) || !has(1) {
        return Err(Error::SingleClass);
    }
    let mut model = assembly.clone();
    let mut history = TrainHistory::default();
    if config.max_epochs == 0 {
        return Ok((model, history));
    }

    let mut best = model.clone();
    let mut best_auc = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut optimizer = OptimizerState::new(config.optimizer);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut shuffle_rng = rng::seeded(rng::derive_seed(config.seed, b"epoch-shuffle"));
    for epoch in 0..config.max_epochs {
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| split.train[i].clone()).collect();
            let (loss, grads) = match model.loss_and_gradients(&batch) {
                Err(Error::NonFinite(_)) => return Err(Error::Divergence { epoch }),
                other => other?,
            };
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            optimizer.step(&mut model, &grads, config.learning_rate);
            if !model.all_finite() {
                return Err(Error::Divergence { epoch });
            }
        }
        let scored = score_examples(&model, &split.validation)?;
        let validation_loss =
            scored.iter().map(|s| crate::model::bce_loss(s.score, s.label)).sum::<f64>() / scored.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / split.train.len() as f64,
            validation_loss,
            validation_auc: metrics::auc(&scored)?,
        };
        if !record.validation_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        on_epoch(&record);
        history.epochs.push(record);
        if record.validation_auc > best_auc {
            best_auc = record.validation_auc;
            best = model.clone();
            history.selected_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((best, history))
}
