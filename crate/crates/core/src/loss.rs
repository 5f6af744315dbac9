//! Label-smoothed, class-weighted categorical cross-entropy.
//!
//! For a smoothed target `y'` and predicted distribution `p`, the per-sample
//! loss is `-w * sum_k y'_k ln p_k`; its gradient with respect to the logits
//! is `w * (softmax(z) - y')`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("target is not a valid one-hot vector")]
    InvalidTarget,
    #[error("probability {value} at class {class} is outside the log domain")]
    Domain { class: usize, value: f64 },
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("class {class} has no training samples; merge or drop it before weighting")]
    EmptyClass { class: usize },
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
}

/// How a batch of weighted per-sample losses is reduced to one number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchReduction {
    /// `sum_i w_i CE_i / batch_size`.
    #[default]
    BatchSize,
    /// `sum_i w_i CE_i / sum_i w_i`.
    WeightSum,
}

impl BatchReduction {
    pub fn denominator(self, batch_size: usize, weight_sum: f64) -> f64 {
        match self {
            BatchReduction::BatchSize => batch_size as f64,
            BatchReduction::WeightSum => weight_sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub label_smoothing: bool,
    pub epsilon: f64,
    pub class_weighting: bool,
    pub weight_cap: f64,
    pub reduction: BatchReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            label_smoothing: true,
            epsilon: 0.06,
            class_weighting: true,
            weight_cap: 4.0,
            reduction: BatchReduction::BatchSize,
        }
    }
}

impl LossConfig {
    /// Smoothing coefficient actually applied (0 when smoothing is switched off).
    pub fn effective_epsilon(&self) -> f64 {
        if self.label_smoothing {
            self.epsilon
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(LossError::InvalidConfig(format!(
                "epsilon = {} must lie in [0, 1)",
                self.epsilon
            )));
        }
        if !(self.weight_cap.is_finite() && self.weight_cap > 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "weight_cap = {} must be positive",
                self.weight_cap
            )));
        }
        Ok(())
    }
}

/// `(1 - eps) * y + eps / K` for a one-hot `y`.
pub fn smooth_labels(one_hot: &[f64], epsilon: f64) -> Result<Vec<f64>, LossError> {
    let ones = one_hot.iter().filter(|&&v| v == 1.0).count();
    let zeros = one_hot.iter().filter(|&&v| v == 0.0).count();
    if one_hot.len() < 2 || ones != 1 || ones + zeros != one_hot.len() {
        return Err(LossError::InvalidTarget);
    }
    let k = one_hot.len() as f64;
    Ok(one_hot
        .iter()
        .map(|&y| (1.0 - epsilon) * y + epsilon / k)
        .collect())
}

/// Smoothed target for class index `class` out of `k`.
pub fn smoothed_target(class: usize, k: usize, epsilon: f64) -> Vec<f64> {
    let off = epsilon / k as f64;
    let mut t = vec![off; k];
    t[class] = 1.0 - epsilon + off;
    t
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// `-w * sum_k target_k ln(probs_k)`.
pub fn weighted_ce(probs: &[f64], target: &[f64], w: f64) -> Result<f64, LossError> {
    if probs.len() != target.len() {
        return Err(LossError::Length(probs.len(), target.len()));
    }
    if let Some((class, &value)) = probs
        .iter()
        .enumerate()
        .find(|(_, &p)| !(p > 0.0 && p.is_finite()))
    {
        return Err(LossError::Domain { class, value });
    }
    Ok(-w * probs.iter().zip(target).map(|(p, t)| t * p.ln()).sum::<f64>())
}

/// Same loss evaluated from logits through a stable log-softmax.
pub fn weighted_ce_from_logits(logits: &[f64], target: &[f64], w: f64) -> f64 {
    -w * log_softmax(logits)
        .iter()
        .zip(target)
        .map(|(lp, t)| t * lp)
        .sum::<f64>()
}

/// `w * (softmax(logits) - target)`.
pub fn ce_grad_logits(logits: &[f64], target: &[f64], w: f64) -> Vec<f64> {
    softmax(logits)
        .into_iter()
        .zip(target)
        .map(|(p, t)| w * (p - t))
        .collect()
}

/// Per-class loss multipliers, capped from above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    /// Values before the cap was applied, kept for run metadata.
    pub uncapped: Vec<f64>,
    pub cap: f64,
}

impl ClassWeights {
    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0; k],
            uncapped: vec![1.0; k],
            cap: f64::INFINITY,
        }
    }

    pub fn get(&self, class: usize) -> f64 {
        self.weights[class]
    }
}

/// Balanced weights `min(cap, N / (K * n_c))`.
pub fn compute_class_weights(counts: &[usize], cap: f64) -> Result<ClassWeights, LossError> {
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(LossError::EmptyClass { class });
    }
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    let uncapped: Vec<f64> = counts.iter().map(|&c| n as f64 / (k * c as f64)).collect();
    let weights = uncapped.iter().map(|&w| w.min(cap)).collect();
    Ok(ClassWeights {
        weights,
        uncapped,
        cap,
    })
}

/// Balanced weights over the classes that actually occur.
///
/// Absent classes are dropped from `K` and `N` and receive weight 1.0; no
/// training sample ever carries that weight.
pub fn compute_present_class_weights(counts: &[usize], cap: f64) -> ClassWeights {
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    let Ok(compact) = compute_class_weights(&present, cap) else {
        return ClassWeights::uniform(counts.len());
    };
    let mut weights = vec![1.0; counts.len()];
    let mut uncapped = vec![1.0; counts.len()];
    let mut j = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            weights[i] = compact.weights[j];
            uncapped[i] = compact.uncapped[j];
            j += 1;
        }
    }
    ClassWeights {
        weights,
        uncapped,
        cap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_hot(k: usize, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; k];
        v[c] = 1.0;
        v
    }

    #[test]
    fn smoothing_zero_is_noop() {
        let y = one_hot(7, 2);
        assert_eq!(smooth_labels(&y, 0.0).unwrap(), y);
    }

    #[test]
    fn smoothing_values() {
        // 1 - 0.06 + 0.06/7 and 0.06/7
        let y = smooth_labels(&one_hot(7, 4), 0.06).unwrap();
        assert_abs_diff_eq!(y[4], 0.948_571_428_571_428_6, epsilon = 1e-12);
        for (i, v) in y.iter().enumerate() {
            if i != 4 {
                assert_abs_diff_eq!(*v, 0.008_571_428_571_428_571, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(y.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(y, smoothed_target(4, 7, 0.06));
    }

    #[test]
    fn smoothing_rejects_non_one_hot() {
        assert_eq!(smooth_labels(&[0.5, 0.5], 0.1), Err(LossError::InvalidTarget));
        assert_eq!(smooth_labels(&[1.0, 1.0], 0.1), Err(LossError::InvalidTarget));
        assert_eq!(smooth_labels(&[0.0, 0.0], 0.1), Err(LossError::InvalidTarget));
        assert_eq!(smooth_labels(&[1.0], 0.1), Err(LossError::InvalidTarget));
    }

    #[test]
    fn uniform_prediction_costs_ln_k() {
        let probs = vec![1.0 / 7.0; 7];
        let t = smoothed_target(1, 7, 0.06);
        assert_abs_diff_eq!(weighted_ce(&probs, &t, 1.0).unwrap(), 7f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn perfect_prediction_costs_zero() {
        let t = one_hot(7, 3);
        // probs must be strictly positive, so use the limit through logits.
        let mut logits = vec![-800.0; 7];
        logits[3] = 800.0;
        assert_eq!(weighted_ce_from_logits(&logits, &t, 1.0), 0.0);
    }

    #[test]
    fn weight_scales_linearly() {
        let probs = softmax(&[0.3, -1.2, 2.0]);
        let t = smoothed_target(0, 3, 0.06);
        let a = weighted_ce(&probs, &t, 1.5).unwrap();
        let b = weighted_ce(&probs, &t, 3.0).unwrap();
        assert_eq!(2.0 * a, b);
    }

    #[test]
    fn domain_error_on_zero_probability() {
        let r = weighted_ce(&[0.0, 1.0], &[0.5, 0.5], 1.0);
        assert!(matches!(r, Err(LossError::Domain { class: 0, .. })));
    }

    #[test]
    fn gradient_vanishes_at_uniform_target() {
        let g = ce_grad_logits(&[0.7; 7], &[1.0 / 7.0; 7], 2.0);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn class_weight_examples() {
        let w = compute_class_weights(&[5, 5, 5], 4.0).unwrap();
        assert_eq!(w.weights, vec![1.0, 1.0, 1.0]);

        let w = compute_class_weights(&[70, 10, 20], 4.0).unwrap();
        assert_abs_diff_eq!(w.weights[0], 100.0 / 210.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.weights[1], 100.0 / 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.weights[2], 100.0 / 60.0, epsilon = 1e-12);

        let w = compute_class_weights(&[96, 4], 4.0).unwrap();
        assert_abs_diff_eq!(w.weights[0], 100.0 / 192.0, epsilon = 1e-12);
        assert_eq!(w.weights[1], 4.0);
        assert_eq!(w.uncapped[1], 12.5);
    }

    #[test]
    fn empty_class_is_an_error() {
        assert_eq!(
            compute_class_weights(&[3, 0, 2], 4.0),
            Err(LossError::EmptyClass { class: 1 })
        );
    }

    #[test]
    fn present_weights_skip_absent_classes() {
        let w = compute_present_class_weights(&[70, 0, 10, 20, 0], 4.0);
        let compact = compute_class_weights(&[70, 10, 20], 4.0).unwrap();
        assert_eq!(w.weights, vec![compact.weights[0], 1.0, compact.weights[1], compact.weights[2], 1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig { epsilon: 1.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { weight_cap: 0.0, ..Default::default() }.validate().is_err());
        let off = LossConfig { label_smoothing: false, ..Default::default() };
        assert_eq!(off.effective_epsilon(), 0.0);
    }
}
