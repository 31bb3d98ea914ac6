//! Adam with coupled L2 regularization.
//!
//! The decay term is added to the gradient before the moment updates
//! (classic L2, not decoupled weight decay): g <- grad + wd * theta, then
//! m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2, bias-corrected, and
//! theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Parameter;

/// Optimization hyperparameters. Defaults are the trained configuration:
/// 50 epochs, batch 16, learning rate 1e-3, weight decay 1e-5, cross-entropy.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// The only supported objective; carried in the config so the resolved
    /// configuration echo names the loss explicitly.
    pub loss: String,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            shuffle: true,
            loss: "cross_entropy".to_string(),
        }
    }
}

impl TrainConfig {
    /// Front-door validation (CLI / config files). The library-level
    /// `adam_step` itself tolerates lr = 0 so the null-optimizer fixed point
    /// stays testable.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1".to_string()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("betas must lie in [0, 1)".to_string()));
        }
        if self.loss != "cross_entropy" {
            return Err(Error::invalid(format!(
                "unsupported loss {:?} (only \"cross_entropy\")",
                self.loss
            )));
        }
        Ok(())
    }
}

/// One Adam update on a parameter. The step counter increments before bias
/// correction, so the first call uses t = 1.
pub fn adam_step(param: &mut Parameter, grad: &[f64], cfg: &TrainConfig) -> Result<()> {
    if grad.len() != param.tensor.numel() {
        return Err(Error::dim(format!(
            "adam_step: gradient length {} does not match parameter {} ({} elements)",
            grad.len(),
            param.name(),
            param.tensor.numel()
        )));
    }
    if let Some(bad) = grad.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite gradient {bad} for parameter {}",
            param.name()
        )));
    }
    param.step_count += 1;
    let t = param.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut theta = param.tensor.data().to_vec();
    for i in 0..theta.len() {
        let g = grad[i] + cfg.weight_decay * theta[i];
        param.adam_m[i] = cfg.beta1 * param.adam_m[i] + (1.0 - cfg.beta1) * g;
        param.adam_v[i] = cfg.beta2 * param.adam_v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = param.adam_m[i] / bc1;
        let v_hat = param.adam_v[i] / bc2;
        theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    param.set_value(theta);
    Ok(())
}
