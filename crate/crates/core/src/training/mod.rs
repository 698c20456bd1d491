//! Training loop: Adam over `CE + β·CS`, per-epoch validation, and selection
//! of the epoch with the best validation token accuracy.

mod adam;
mod loss;

pub use adam::{clip_global_norm, Adam};
pub use loss::{
    combined_loss, combined_loss_on_tape, cross_entropy_loss, cross_entropy_on_tape, cs_loss,
    cs_loss_on_tape, BatchLoss,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EncodedSequence;
use crate::diagnostics::inter_class_similarity;
use crate::error::{Error, Result};
use crate::model::{Dropout, Model};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// The CS-loss weight selected for downstream use at full scale.
pub const SELECTED_BETA: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    /// Toy-scale defaults: 10 epochs, batch 10, learning rate 1e-3.
    fn default() -> Self {
        TrainConfig {
            beta: SELECTED_BETA,
            epochs: 10,
            batch_size: 10,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    /// Fine-tuning schedule for a pretrained encoder: learning rate 1e-5.
    pub fn fine_tune() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// One line of the training report stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub ce_loss: f64,
    pub cs_loss: f64,
    pub val_accuracy: f64,
    /// Mean last-layer inter-class similarity over validation sequences that
    /// contain both classes.
    pub mean_s_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub selected_epoch: usize,
    pub final_mean_s_l: Option<f64>,
}

impl TrainReport {
    /// Epoch records as JSON lines.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }

    pub fn selected(&self) -> &EpochRecord {
        &self.epochs[self.selected_epoch - 1]
    }
}

/// Validation token accuracy and mean last-layer similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub accuracy: f64,
    pub mean_s_l: Option<f64>,
}

/// Argmax token accuracy (preserve iff p ≥ 0.5) over every token, plus the
/// mean last-layer similarity. Sequences are evaluated in parallel.
pub fn validate(model: &Model, data: &[EncodedSequence]) -> Result<Validation> {
    let per_seq = data
        .par_iter()
        .map(|seq| {
            let (acts, probs) = model.predict(&seq.ids)?;
            let correct = probs
                .iter()
                .zip(&seq.targets)
                .filter(|&(&p, &t)| (p >= 0.5) == (t == 1))
                .count();
            let s = inter_class_similarity(acts.last(), &seq.preserve, &seq.discard);
            Ok((correct, seq.len(), s))
        })
        .collect::<Result<Vec<_>>>()?;
    let correct: usize = per_seq.iter().map(|r| r.0).sum();
    let total: usize = per_seq.iter().map(|r| r.1).sum();
    let sims: Vec<f64> = per_seq.iter().filter_map(|r| r.2).collect();
    Ok(Validation {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        mean_s_l: (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64),
    })
}

/// Trains `model` and returns the parameters of the epoch with the highest
/// validation accuracy (earliest on ties). Deterministic given the model's
/// init seed and `config.seed`.
pub fn train(
    model: Model,
    train_set: &[EncodedSequence],
    validation: &[EncodedSequence],
    config: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    config.validate()?;
    model.config.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::Split("training and validation sets must be nonempty".into()));
    }

    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut ce_total, mut cs_total) = (0.0, 0.0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<EncodedSequence> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let mut tape = Tape::new();
            let vars = model.params.register(&mut tape);
            let mut dropout = Dropout {
                rate: model.config.dropout,
                rng: &mut rng,
            };
            let loss = combined_loss_on_tape(
                &mut tape,
                &vars,
                &model.config,
                &batch,
                config.beta,
                Some(&mut dropout),
            )?;
            let value = tape.value(loss.total).item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss: value,
                });
            }
            ce_total += loss.ce * batch.len() as f64;
            cs_total += loss.cs * batch.len() as f64;

            let mut grads = tape.backward(loss.total)?;
            let mut grad_list: Vec<Tensor> = vars.leaves().into_iter().map(|&v| grads.take(v)).collect();
            if grad_list.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss: f64::NAN,
                });
            }
            if let Some(max) = config.clip_norm {
                clip_global_norm(&mut grad_list, max);
            }
            adam.step(model.params.leaves_mut(), &grad_list);
        }

        let val = validate(&model, validation)?;
        let n = train_set.len() as f64;
        records.push(EpochRecord {
            epoch,
            ce_loss: ce_total / n,
            cs_loss: cs_total / n,
            val_accuracy: val.accuracy,
            mean_s_l: val.mean_s_l,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val.accuracy > *acc) {
            best = Some((val.accuracy, epoch, model.clone()));
        }
    }

    let (_, selected_epoch, best_model) = best.expect("at least one epoch ran");
    let final_mean_s_l = records[selected_epoch - 1].mean_s_l;
    Ok((
        best_model,
        TrainReport {
            epochs: records,
            selected_epoch,
            final_mean_s_l,
        },
    ))
}

/// Index of the maximum accuracy, earliest on ties.
pub fn select_epoch(accuracies: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &a) in accuracies.iter().enumerate() {
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i)
}
