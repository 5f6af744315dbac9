//! Supervised epoch task over a parsed dataset and a split manifest.
//!
//! Training rows are augmented (when enabled) with keys derived from
//! `(seed, epoch, row index)`, converted to model inputs in parallel, and fed
//! in a per-epoch keyed shuffle. Validation and test rows only go through
//! input preparation.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::augment::{augment, AugmentConfig, AugmentKey};
use crate::controller::{ControllerError, EpochMetrics, EpochTask, PhaseOptimizer};
use crate::dataset::Sample;
use crate::loss::{smoothed_target, ClassWeights, LossConfig};
use crate::model::{InputSpec, SampleKey, TrainableModel};
use crate::rng::keyed_rng;

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Model inputs for the rows `indices`, without augmentation.
pub fn prepare_inputs(samples: &[Sample], indices: &[usize], spec: InputSpec) -> Vec<Vec<f64>> {
    indices
        .par_iter()
        .map(|&i| spec.features(&samples[i].image))
        .collect()
}

/// Smoothed cross-entropy of probability rows, averaged without class weights.
/// Probabilities are floored at 1e-15 before the logarithm.
pub fn mean_smoothed_ce(probs: &[Vec<f64>], labels: &[usize], epsilon: f64) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let k = probs[0].len();
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let t = smoothed_target(y, k, epsilon);
            -p.iter()
                .zip(&t)
                .map(|(pk, tk)| tk * pk.max(1e-15).ln())
                .sum::<f64>()
        })
        .sum();
    total / probs.len() as f64
}

/// Predictions and mean loss of `model` in evaluation mode.
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate_inputs(
    model: &dyn TrainableModel,
    inputs: &[Vec<f64>],
    labels: &[usize],
    epsilon: f64,
) -> Evaluation {
    let probs = model.forward(inputs, None);
    let predictions: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Evaluation {
        loss: mean_smoothed_ce(&probs, labels, epsilon),
        accuracy: if labels.is_empty() {
            0.0
        } else {
            correct as f64 / labels.len() as f64
        },
        predictions,
    }
}

pub struct SupervisedTask<'a> {
    samples: &'a [Sample],
    train_indices: Vec<usize>,
    val_inputs: Vec<Vec<f64>>,
    val_labels: Vec<usize>,
    spec: InputSpec,
    num_classes: usize,
    batch_size: usize,
    seed: u64,
    augment: AugmentConfig,
    loss: LossConfig,
    weights: ClassWeights,
}

impl<'a> SupervisedTask<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        samples: &'a [Sample],
        train_indices: &[usize],
        val_indices: &[usize],
        spec: InputSpec,
        num_classes: usize,
        batch_size: usize,
        seed: u64,
        augment: AugmentConfig,
        loss: LossConfig,
        weights: ClassWeights,
    ) -> Result<Self, ControllerError> {
        if batch_size == 0 {
            return Err(ControllerError::Config("batch_size must be >= 1".into()));
        }
        if train_indices.is_empty() || val_indices.is_empty() {
            return Err(ControllerError::Config(
                "training and validation splits must both be non-empty".into(),
            ));
        }
        Ok(Self {
            samples,
            train_indices: train_indices.to_vec(),
            val_inputs: prepare_inputs(samples, val_indices, spec),
            val_labels: val_indices.iter().map(|&i| samples[i].label.index()).collect(),
            spec,
            num_classes,
            batch_size,
            seed,
            augment,
            loss,
            weights,
        })
    }

    /// Training rows in the order epoch `epoch` visits them.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order = self.train_indices.clone();
        order.shuffle(&mut keyed_rng("batch-order", &[self.seed, epoch as u64]));
        order
    }

    fn train_input(&self, row: usize, epoch: usize) -> Result<Vec<f64>, ControllerError> {
        let image = &self.samples[row].image;
        if self.augment.enabled {
            let key = AugmentKey {
                seed: self.seed,
                epoch: epoch as u64,
                index: row as u64,
            };
            let warped = augment(image, &self.augment, key)
                .map_err(|e| ControllerError::Task(e.to_string()))?;
            Ok(self.spec.features(&warped))
        } else {
            Ok(self.spec.features(image))
        }
    }
}

impl EpochTask for SupervisedTask<'_> {
    fn train_epoch(
        &mut self,
        model: &mut dyn TrainableModel,
        optimizer: &mut PhaseOptimizer,
        epoch: usize,
    ) -> Result<EpochMetrics, ControllerError> {
        let epsilon = self.loss.effective_epsilon();
        let order = self.epoch_order(epoch);
        let mut loss_total = 0.0;
        let mut correct = 0usize;

        for batch in order.chunks(self.batch_size) {
            let inputs = batch
                .par_iter()
                .map(|&row| self.train_input(row, epoch))
                .collect::<Result<Vec<_>, _>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| self.samples[i].label.index()).collect();
            let targets: Vec<Vec<f64>> = labels
                .iter()
                .map(|&y| smoothed_target(y, self.num_classes, epsilon))
                .collect();
            let weights: Vec<f64> = labels
                .iter()
                .map(|&y| {
                    if self.loss.class_weighting {
                        self.weights.get(y)
                    } else {
                        1.0
                    }
                })
                .collect();
            let keys: Vec<SampleKey> = batch
                .iter()
                .map(|&row| [self.seed, epoch as u64, row as u64])
                .collect();

            let out = model.loss_and_gradients(&inputs, &targets, &weights, Some(&keys));
            let denom = self
                .loss
                .reduction
                .denominator(batch.len(), weights.iter().sum());
            loss_total += out.weighted_loss_sum / denom * batch.len() as f64;
            correct += out
                .probs
                .iter()
                .zip(&labels)
                .filter(|(p, &y)| argmax(p) == y)
                .count();
            optimizer.apply(model, &out.grads, 1.0 / denom)?;
        }

        let n = order.len() as f64;
        Ok(EpochMetrics {
            loss: loss_total / n,
            accuracy: correct as f64 / n,
        })
    }

    fn validate(&mut self, model: &dyn TrainableModel) -> Result<EpochMetrics, ControllerError> {
        let eval = evaluate_inputs(model, &self.val_inputs, &self.val_labels, self.loss.effective_epsilon());
        Ok(EpochMetrics {
            loss: eval.loss,
            accuracy: eval.accuracy,
        })
    }
}
