use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Rmsprop,
    Adam,
}

/// Step size plus the hyperparameters of every supported optimizer; each
/// kind reads only its own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// RMSprop squared-gradient decay.
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Rmsprop,
            lr: 0.002,
            alpha: 0.99,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self { kind: OptimizerKind::Sgd, lr, ..Self::default() }
    }

    pub fn rmsprop(lr: f64) -> Self {
        Self { kind: OptimizerKind::Rmsprop, lr, ..Self::default() }
    }

    pub fn adam(lr: f64) -> Self {
        Self { kind: OptimizerKind::Adam, lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(invalid(format!("optimizer eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Moment buffers, created lazily on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One in-place update of `params` along `-grads`.
///
/// RMSprop: `v = a v + (1 - a) g^2`, `p -= lr g / (sqrt(v) + eps)`.
/// Adam: bias-corrected first and second moments,
/// `p -= lr m_hat / (sqrt(v_hat) + eps)`.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut [f64],
    grads: &[f64],
    cfg: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(invalid(format!(
            "optimizer: {} parameters but {} gradient entries",
            params.len(),
            grads.len()
        )));
    }
    if state.step > 0 && state.m.len() != params.len() {
        return Err(invalid("optimizer state was built for a different parameter count"));
    }
    if state.step == 0 {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
    }
    state.step += 1;
    let lr = cfg.lr;
    match cfg.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Rmsprop => {
            let a = cfg.alpha;
            for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.v) {
                *v = a * *v + (1.0 - a) * g * g;
                *p -= lr * g / (v.sqrt() + cfg.eps);
            }
        }
        OptimizerKind::Adam => {
            let t = state.step as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            }
        }
    }
    Ok(())
}
