//! The four training objectives and their mini-batch gradient estimators.

use super::TrainConfig;
use crate::autodiff::{Graph, Tensor, Var};
use crate::calibration::aece_var;
use crate::data::Batch;
use crate::error::{invalid, Result};
use crate::models::{self, MlpSpec, ParamVector};
use crate::rng::{self, tag};
use crate::variational::{self, kl_var, VariationalPosterior};

/// Objective value, its components, and the gradient of the value.
///
/// `ce` and `aece` are averages over the `R` parameter samples for the
/// Bayesian objectives. `aece` is reported whenever the batch has at least
/// two examples, even when it is not part of the loss (`lambda = 0` or a
/// non-calibrated objective).
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub loss: f64,
    pub ce: f64,
    pub aece: Option<f64>,
    pub kl: Option<f64>,
    /// `d loss / d theta` (frequentist) or `d loss / d [mu, rho]` (Bayesian).
    pub grad: Vec<f64>,
}

struct Terms {
    ce: Var,
    aece: Option<Var>,
    total: Var,
}

/// `L(theta | batch) + lambda * AECE(theta | batch)` for one parameter node.
fn data_terms(g: &mut Graph, spec: &MlpSpec, theta: Var, batch: &Batch, cfg: &TrainConfig) -> Result<Terms> {
    let lambda = cfg.effective_lambda();
    if lambda > 0.0 && batch.len() < 2 {
        return Err(invalid("the calibration regularizer needs mini-batches of at least 2 examples"));
    }
    let x = g.constant(batch.inputs.clone());
    let z = models::logits(g, spec, theta, x)?;
    let ce = models::nll_from_logits(g, z, &batch.labels)?;
    let aece = if batch.len() >= 2 {
        let p = g.softmax(z)?;
        Some(aece_var(g, p, &batch.labels, &cfg.kernel, &cfg.temps, cfg.aece_mode)?)
    } else {
        None
    };
    let total = match aece {
        Some(a) if lambda > 0.0 => {
            let weighted = g.scale(a, lambda)?;
            g.add(ce, weighted)?
        }
        _ => ce,
    };
    Ok(Terms { ce, aece, total })
}

/// `L(theta | batch) + lambda * AECE(theta | batch)`; the AECE term is
/// present only for calibration-aware objectives with `lambda > 0`.
pub fn frequentist_objective(theta: &ParamVector, spec: &MlpSpec, batch: &Batch, cfg: &TrainConfig) -> Result<f64> {
    let mut g = Graph::new();
    let t = g.constant(theta.to_tensor());
    let terms = data_terms(&mut g, spec, t, batch, cfg)?;
    g.scalar_value(terms.total)
}

pub fn frequentist_gradient(theta: &ParamVector, spec: &MlpSpec, batch: &Batch, cfg: &TrainConfig) -> Result<StepOutput> {
    let mut g = Graph::new();
    let t = g.param(theta.to_tensor());
    let terms = data_terms(&mut g, spec, t, batch, cfg)?;
    let grads = g.backward(terms.total)?;
    Ok(StepOutput {
        loss: g.scalar_value(terms.total)?,
        ce: g.scalar_value(terms.ce)?,
        aece: terms.aece.map(|a| g.scalar_value(a)).transpose()?,
        kl: None,
        grad: grads.wrt(t)?.data().to_vec(),
    })
}

/// The `R` standard-normal draws used at optimizer step `step`.
pub fn noise_draws(param_count: usize, samples: usize, seed: u64, step: u64) -> Vec<Vec<f64>> {
    (0..samples)
        .map(|r| {
            let mut rng = rng::stream(seed, &[tag::NOISE, step, r as u64]);
            variational::standard_normal(param_count, &mut rng)
        })
        .collect()
}

struct BayesGraph {
    g: Graph,
    mu: Var,
    rho: Var,
    total: Var,
    ce: f64,
    aece: Option<f64>,
    kl: f64,
}

/// Monte Carlo free energy on a mini-batch with frozen noise:
/// `(1/R) sum_r [L(theta_r) + lambda AECE(theta_r)] + beta |batch| / n KL(q || p)`.
fn bayes_graph(
    post: &VariationalPosterior,
    spec: &MlpSpec,
    batch: &Batch,
    full_size: usize,
    cfg: &TrainConfig,
    eps: &[Vec<f64>],
) -> Result<BayesGraph> {
    if eps.is_empty() {
        return Err(invalid("need at least one noise draw"));
    }
    if full_size < batch.len() || batch.is_empty() {
        return Err(invalid(format!(
            "mini-batch of {} examples from a training set of {full_size}",
            batch.len()
        )));
    }
    let mut g = Graph::new();
    let mu = g.param(Tensor::vector(post.mu().to_vec()));
    let rho = g.param(Tensor::vector(post.rho().to_vec()));
    let inv_r = 1.0 / eps.len() as f64;

    let mut data: Option<Var> = None;
    let (mut ce, mut aece, mut have_aece) = (0.0, 0.0, false);
    for e in eps {
        if e.len() != post.len() {
            return Err(invalid("noise draw length does not match the posterior"));
        }
        let theta = variational::reparameterize(&mut g, mu, rho, e)?;
        let terms = data_terms(&mut g, spec, theta, batch, cfg)?;
        ce += g.scalar_value(terms.ce)?;
        if let Some(a) = terms.aece {
            aece += g.scalar_value(a)?;
            have_aece = true;
        }
        data = Some(match data {
            None => terms.total,
            Some(acc) => g.add(acc, terms.total)?,
        });
    }
    let data = g.scale(data.expect("eps is non-empty"), inv_r)?;

    let kl = kl_var(&mut g, mu, rho, &cfg.prior)?;
    let kl_value = g.scalar_value(kl)?;
    let total = if cfg.beta > 0.0 {
        let weighted = g.scale(kl, cfg.beta * batch.len() as f64 / full_size as f64)?;
        g.add(data, weighted)?
    } else {
        data
    };
    Ok(BayesGraph {
        g,
        mu,
        rho,
        total,
        ce: ce * inv_r,
        aece: have_aece.then_some(aece * inv_r),
        kl: kl_value,
    })
}

/// Value of the Bayesian mini-batch objective for the given noise draws.
pub fn bayesian_objective(
    post: &VariationalPosterior,
    spec: &MlpSpec,
    batch: &Batch,
    full_size: usize,
    cfg: &TrainConfig,
    eps: &[Vec<f64>],
) -> Result<f64> {
    let bg = bayes_graph(post, spec, batch, full_size, cfg, eps)?;
    bg.g.scalar_value(bg.total)
}

/// Reparametrized gradient of [`bayesian_objective`] w.r.t. `[mu, rho]`.
pub fn bayesian_gradient(
    post: &VariationalPosterior,
    spec: &MlpSpec,
    batch: &Batch,
    full_size: usize,
    cfg: &TrainConfig,
    eps: &[Vec<f64>],
) -> Result<StepOutput> {
    let bg = bayes_graph(post, spec, batch, full_size, cfg, eps)?;
    let grads = bg.g.backward(bg.total)?;
    let mut grad = grads.wrt(bg.mu)?.data().to_vec();
    grad.extend_from_slice(grads.wrt(bg.rho)?.data());
    Ok(StepOutput {
        loss: bg.g.scalar_value(bg.total)?,
        ce: bg.ce,
        aece: bg.aece,
        kl: Some(bg.kl),
        grad,
    })
}

/// Stochastic gradient of the calibration-aware free energy at optimizer step
/// `step`, with `cfg.samples` fresh draws keyed by `(cfg.seed, step)`.
pub fn ca_bnn_step_gradient(
    post: &VariationalPosterior,
    spec: &MlpSpec,
    batch: &Batch,
    full_size: usize,
    cfg: &TrainConfig,
    step: u64,
) -> Result<StepOutput> {
    let eps = noise_draws(post.len(), cfg.samples, cfg.seed, step);
    bayesian_gradient(post, spec, batch, full_size, cfg, &eps)
}
