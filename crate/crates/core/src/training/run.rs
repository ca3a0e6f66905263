use std::time::Instant;

use super::log::{EpochRecord, TrainLog};
use super::objective::{ca_bnn_step_gradient, frequentist_gradient};
use super::optim::{optimizer_step, OptimizerState};
use super::TrainConfig;
use crate::autodiff::Tensor;
use crate::calibration::{compute_ece, score_predictions, CalibrationReport, PredictionRecord};
use crate::data::{batch_indices, Dataset};
use crate::error::{invalid, Error, Result};
use crate::models::{self, init_params, MlpSpec, ParamVector};
use crate::rng::{derive_seed, tag};
use crate::variational::{ensemble_predict, kl_to_prior, VariationalPosterior};

/// Point estimate (frequentist objectives) or variational posterior
/// (Bayesian objectives).
#[derive(Debug, Clone, PartialEq)]
pub enum ModelState {
    Point(ParamVector),
    Posterior(VariationalPosterior),
}

impl ModelState {
    pub fn is_bayesian(&self) -> bool {
        matches!(self, ModelState::Posterior(_))
    }
}

/// Seed of the shuffle for `epoch` (zero-based).
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    derive_seed(seed, &[tag::EPOCH, epoch as u64])
}

/// Seed of the evaluation ensemble draws; the same draws are used after
/// every epoch.
pub fn eval_seed(seed: u64) -> u64 {
    derive_seed(seed, &[tag::EVAL])
}

/// Parameters from `init_params(spec, cfg.seed)`, wrapped in a posterior
/// with log-std `cfg.rho_init` for the Bayesian objectives.
pub fn initial_state(spec: &MlpSpec, cfg: &TrainConfig) -> ModelState {
    let theta = init_params(spec, cfg.seed);
    if cfg.objective.is_bayesian() {
        ModelState::Posterior(VariationalPosterior::from_params(&theta, cfg.rho_init))
    } else {
        ModelState::Point(theta)
    }
}

/// Predictive class probabilities; posteriors average `eval_samples`
/// members drawn from the evaluation stream of `seed`.
pub fn predict(state: &ModelState, spec: &MlpSpec, x: &Tensor, eval_samples: usize, seed: u64) -> Result<Tensor> {
    match state {
        ModelState::Point(theta) => models::predict_probs(spec, theta, x),
        ModelState::Posterior(post) => ensemble_predict(post, spec, x, eval_samples, eval_seed(seed)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub probs: Tensor,
    pub records: Vec<PredictionRecord>,
    pub report: CalibrationReport,
}

pub fn evaluate(
    state: &ModelState,
    spec: &MlpSpec,
    ds: &Dataset,
    bins: usize,
    eval_samples: usize,
    seed: u64,
) -> Result<Evaluation> {
    let probs = predict(state, spec, ds.inputs(), eval_samples, seed)?;
    let records = score_predictions(&probs, ds.labels())?;
    let report = compute_ece(&records, bins)?;
    Ok(Evaluation { probs, records, report })
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Mini-batch training from `init`, evaluating on `test` after every epoch.
///
/// Each epoch visits `train` in a fresh seeded order, in `ceil(n / batch_size)`
/// steps. Bayesian objectives draw `cfg.samples` noise vectors per step from
/// a stream keyed by the global step index.
pub fn train(
    spec: &MlpSpec,
    init: ModelState,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainLog)> {
    cfg.validate()?;
    spec.validate()?;
    if init.is_bayesian() != cfg.objective.is_bayesian() {
        return Err(invalid(format!(
            "objective {} does not match the {} initial state",
            cfg.objective,
            if init.is_bayesian() { "Bayesian" } else { "point-estimate" }
        )));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for ds in [train, test] {
        if ds.dim() != spec.input_dim || ds.class_count() != spec.class_count {
            return Err(invalid(format!(
                "dataset has {} features / {} classes, model expects {} / {}",
                ds.dim(),
                ds.class_count(),
                spec.input_dim,
                spec.class_count
            )));
        }
    }
    let n = train.len();
    if cfg.effective_lambda() > 0.0 && n % cfg.batch_size == 1 {
        return Err(invalid(format!(
            "{n} training examples in batches of {} leave a final batch of one, \
             which the calibration regularizer cannot score",
            cfg.batch_size
        )));
    }

    let mut state = init;
    let mut opt = OptimizerState::new();
    let mut log = TrainLog::default();
    let mut global: u64 = 0;
    for epoch in 0..cfg.epochs {
        let start = cfg.timing.then(Instant::now);
        let (mut ce_sum, mut aece_sum, mut aece_batches) = (0.0, 0.0, 0usize);
        for (b, idx) in batch_indices(n, cfg.batch_size, epoch_seed(cfg.seed, epoch))?.iter().enumerate() {
            let batch = train.select(idx);
            let out = match &state {
                ModelState::Point(theta) => frequentist_gradient(theta, spec, &batch, cfg)?,
                ModelState::Posterior(post) => ca_bnn_step_gradient(post, spec, &batch, n, cfg, global)?,
            };
            if !out.loss.is_finite() || !all_finite(&out.grad) {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step: b + 1,
                    global_step: global as usize + 1,
                });
            }
            ce_sum += out.ce;
            if let Some(a) = out.aece {
                aece_sum += a;
                aece_batches += 1;
            }
            match &mut state {
                ModelState::Point(theta) => optimizer_step(&mut opt, theta.values_mut(), &out.grad, &cfg.optimizer)?,
                ModelState::Posterior(post) => {
                    let mut phi = post.phi();
                    optimizer_step(&mut opt, &mut phi, &out.grad, &cfg.optimizer)?;
                    post.set_phi(&phi)?;
                }
            }
            global += 1;
        }

        let eval = evaluate(&state, spec, test, cfg.bins, cfg.eval_samples, cfg.seed)?;
        let kl = match &state {
            ModelState::Posterior(post) => Some(kl_to_prior(post, &cfg.prior)?),
            ModelState::Point(_) => None,
        };
        log.records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: ce_sum / n as f64,
            test_acc: eval.report.accuracy,
            test_ece: eval.report.ece,
            kl,
            aece: (aece_batches > 0).then(|| aece_sum / aece_batches as f64),
            seconds: start.map(|s| s.elapsed().as_secs_f64()),
        });
    }
    Ok((state, log))
}
