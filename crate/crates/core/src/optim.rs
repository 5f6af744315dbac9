//! Adam and AdamW.
//!
//! ```text
//! m <- b1 m + (1 - b1) g
//! v <- b2 v + (1 - b2) g^2
//! m_hat = m / (1 - b1^t),  v_hat = v / (1 - b2^t)
//! theta <- theta - lr m_hat / (sqrt(v_hat) + eps)            (Adam)
//! theta <- theta - lr m_hat / (sqrt(v_hat) + eps) - lr wd theta_prev   (AdamW)
//! ```
//!
//! AdamW's decay acts on the parameters directly and never enters `m` or `v`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("dimension mismatch: theta has {theta}, grad has {grad}, state has {state}")]
    Dimension {
        theta: usize,
        grad: usize,
        state: usize,
    },
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} must lie in [0, 1)"));
            }
        }
        if !(self.eps_hat.is_finite() && self.eps_hat > 0.0) {
            return bad(format!("eps_hat = {} must be positive", self.eps_hat));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay = {} must be >= 0", self.weight_decay));
        }
        Ok(())
    }
}

/// Moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

fn check_dims(theta: &[f64], grad: &[f64], state: &OptimState) -> Result<(), OptimError> {
    if theta.len() != grad.len() || theta.len() != state.m.len() || state.m.len() != state.v.len() {
        return Err(OptimError::Dimension {
            theta: theta.len(),
            grad: grad.len(),
            state: state.m.len(),
        });
    }
    Ok(())
}

/// Advance the moments and return the bias-corrected Adam direction
/// `m_hat / (sqrt(v_hat) + eps)` for each component.
fn moment_update(grad: &[f64], state: &mut OptimState, cfg: &OptimConfig) -> Vec<f64> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    grad.iter()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .map(|(&g, (m, v))| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            m_hat / (v_hat.sqrt() + cfg.eps_hat)
        })
        .collect()
}

/// One Adam update in place. `cfg.weight_decay` is ignored.
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<(), OptimError> {
    check_dims(theta, grad, state)?;
    let dir = moment_update(grad, state, cfg);
    for (p, d) in theta.iter_mut().zip(dir) {
        *p -= cfg.learning_rate * d;
    }
    Ok(())
}

/// One AdamW update in place; decay uses the pre-step parameter values.
pub fn adamw_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<(), OptimError> {
    check_dims(theta, grad, state)?;
    let dir = moment_update(grad, state, cfg);
    for (p, d) in theta.iter_mut().zip(dir) {
        let prev = *p;
        *p = prev - cfg.learning_rate * d - cfg.learning_rate * cfg.weight_decay * prev;
    }
    Ok(())
}

/// Dispatch on `kind`. `decay` turns the AdamW decay off for parameters
/// such as biases; it has no effect on Adam.
pub fn step(
    kind: OptimizerKind,
    theta: &mut [f64],
    grad: &[f64],
    state: &mut OptimState,
    cfg: &OptimConfig,
    decay: bool,
) -> Result<(), OptimError> {
    match (kind, decay) {
        (OptimizerKind::AdamW, true) => adamw_step(theta, grad, state, cfg),
        _ => adam_step(theta, grad, state, cfg),
    }
}
