//! Training objectives, optimizers and the mini-batch training loop.

mod log;
mod objective;
mod optim;
mod run;

use serde::{Deserialize, Serialize};

use crate::calibration::{AeceMode, KernelSpec, TemperatureSpec, DEFAULT_BINS};
use crate::error::{invalid, Result};
use crate::variational::{GaussianPrior, DEFAULT_RHO_INIT};

pub use log::{EpochRecord, TrainLog, LOG_HEADER};
pub use objective::{
    bayesian_gradient, bayesian_objective, ca_bnn_step_gradient, frequentist_gradient, frequentist_objective,
    noise_draws, StepOutput,
};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use run::{epoch_seed, eval_seed, evaluate, initial_state, predict, train, Evaluation, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Cross-entropy.
    Fnn,
    /// Cross-entropy plus `lambda * AECE`.
    CaFnn,
    /// Free energy: expected cross-entropy plus `beta * KL`.
    Bnn,
    /// Free energy with `lambda * AECE` inside the expectation.
    CaBnn,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Fnn, Objective::CaFnn, Objective::Bnn, Objective::CaBnn];

    pub fn is_bayesian(self) -> bool {
        matches!(self, Objective::Bnn | Objective::CaBnn)
    }

    pub fn is_calibration_aware(self) -> bool {
        matches!(self, Objective::CaFnn | Objective::CaBnn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Fnn => "fnn",
            Objective::CaFnn => "ca-fnn",
            Objective::Bnn => "bnn",
            Objective::CaBnn => "ca-bnn",
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Objective {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| invalid(format!("unknown objective {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Calibration weight; ignored by `fnn` and `bnn`.
    pub lambda: f64,
    /// KL weight; ignored by the frequentist objectives.
    pub beta: f64,
    /// Parameter samples per step (`R`).
    pub samples: usize,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub temps: TemperatureSpec,
    pub aece_mode: AeceMode,
    /// Confidence bins for the test ECE.
    pub bins: usize,
    /// Ensemble size for Bayesian evaluation.
    pub eval_samples: usize,
    pub prior: GaussianPrior,
    /// Initial log standard deviation of the posterior.
    pub rho_init: f64,
    /// Record wall-clock seconds per epoch. Off by default so that logs are
    /// reproducible byte for byte.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::CaBnn,
            lambda: 10.0,
            beta: 0.1,
            samples: 1,
            optimizer: OptimizerConfig::default(),
            batch_size: 64,
            epochs: 50,
            seed: 0,
            kernel: KernelSpec::default(),
            temps: TemperatureSpec::default(),
            aece_mode: AeceMode::FullyDifferentiable,
            bins: DEFAULT_BINS,
            eval_samples: 32,
            prior: GaussianPrior::default(),
            rho_init: DEFAULT_RHO_INIT,
            timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be a finite value >= 0, got {v}")))
            }
        };
        nonneg("lambda", self.lambda)?;
        nonneg("beta", self.beta)?;
        for (name, v) in [
            ("samples", self.samples),
            ("batch_size", self.batch_size),
            ("bins", self.bins),
            ("eval_samples", self.eval_samples),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        if !self.rho_init.is_finite() {
            return Err(invalid("rho_init must be finite"));
        }
        self.optimizer.validate()?;
        self.kernel.validate()?;
        self.temps.validate()?;
        self.prior.validate()
    }

    /// The calibration weight actually applied by the objective.
    pub fn effective_lambda(&self) -> f64 {
        if self.objective.is_calibration_aware() {
            self.lambda
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.lambda, cfg.beta), (10.0, 0.1));
        assert_eq!(cfg.prior.std, 0.05);
        assert_eq!((cfg.temps.tau_r, cfg.temps.tau_c), (0.001, 0.01));
        assert_eq!(cfg.kernel.bandwidth, 0.4);
        assert_eq!((cfg.optimizer.kind, cfg.optimizer.lr), (OptimizerKind::Rmsprop, 0.002));
        assert_eq!(cfg.eval_samples, 32);
    }

    #[test]
    fn invariants() {
        for bad in [
            TrainConfig { lambda: -1.0, ..TrainConfig::default() },
            TrainConfig { beta: -0.1, ..TrainConfig::default() },
            TrainConfig { samples: 0, ..TrainConfig::default() },
            TrainConfig { optimizer: OptimizerConfig::sgd(0.0), ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn objective_names_round_trip() {
        for o in Objective::ALL {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert!("svm".parse::<Objective>().is_err());
        assert_eq!(TrainConfig { objective: Objective::Fnn, ..TrainConfig::default() }.effective_lambda(), 0.0);
    }
}
