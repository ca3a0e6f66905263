//! Mean-field Gaussian variational posterior over network parameters.
//!
//! `q(theta | mu, rho) = N(mu, diag(exp(2 rho)))`, sampled with the
//! reparametrization `theta = mu + exp(rho) * eps`, `eps ~ N(0, I)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{invalid, Result};
use crate::models::{self, MlpSpec, ParamVector};
use crate::rng::{self, tag};

/// Isotropic Gaussian prior with a shared mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianPrior {
    pub mean: f64,
    pub std: f64,
}

impl Default for GaussianPrior {
    fn default() -> Self {
        Self { mean: 0.0, std: 0.05 }
    }
}

impl GaussianPrior {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        let p = Self { mean, std };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite()) || !self.mean.is_finite() {
            return Err(invalid(format!("prior std must be positive and finite, got {}", self.std)));
        }
        Ok(())
    }
}

/// Default initial log standard deviation, `ln(0.01)`.
pub const DEFAULT_RHO_INIT: f64 = -4.605_170_185_988_091;

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl VariationalPosterior {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(invalid(format!("mu has {} entries but rho has {}", mu.len(), rho.len())));
        }
        Ok(Self { mu, rho })
    }

    /// Means at `theta`, every log-std at `rho_init`.
    pub fn from_params(theta: &ParamVector, rho_init: f64) -> Self {
        Self {
            mu: theta.values().to_vec(),
            rho: vec![rho_init; theta.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn std(&self) -> Vec<f64> {
        self.rho.iter().map(|r| r.exp()).collect()
    }

    /// `[mu, rho]` as one vector.
    pub fn phi(&self) -> Vec<f64> {
        let mut phi = self.mu.clone();
        phi.extend(&self.rho);
        phi
    }

    pub fn set_phi(&mut self, phi: &[f64]) -> Result<()> {
        let n = self.len();
        if phi.len() != 2 * n {
            return Err(invalid(format!("phi has {} entries, expected {}", phi.len(), 2 * n)));
        }
        self.mu.copy_from_slice(&phi[..n]);
        self.rho.copy_from_slice(&phi[n..]);
        Ok(())
    }

    /// `mu + exp(rho) * eps`.
    pub fn theta_from_eps(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.rho)
            .zip(eps)
            .map(|((m, r), e)| m + r.exp() * e)
            .collect()
    }
}

pub fn standard_normal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws `theta = mu + exp(rho) * eps` and returns it with the `eps` used.
pub fn sample_theta(
    post: &VariationalPosterior,
    spec: &MlpSpec,
    rng: &mut impl Rng,
) -> Result<(ParamVector, Vec<f64>)> {
    let eps = standard_normal(post.len(), rng);
    let theta = ParamVector::new(spec, post.theta_from_eps(&eps))?;
    Ok((theta, eps))
}

/// Reparametrized sample inside a graph; `eps` enters as a constant so the
/// result is differentiable in `mu` and `rho`.
pub fn reparameterize(g: &mut Graph, mu: Var, rho: Var, eps: &[f64]) -> Result<Var> {
    let e = g.constant(Tensor::vector(eps.to_vec()));
    let sigma = g.exp(rho)?;
    let noise = g.mul(sigma, e)?;
    g.add(mu, noise)
}

/// Closed-form `KL(q || p)` for a diagonal Gaussian against an isotropic prior.
pub fn kl_to_prior(post: &VariationalPosterior, prior: &GaussianPrior) -> Result<f64> {
    prior.validate()?;
    let inv_two_var = 1.0 / (2.0 * prior.std * prior.std);
    let log_std = prior.std.ln();
    Ok(post
        .mu
        .iter()
        .zip(&post.rho)
        .map(|(&m, &r)| {
            let d = m - prior.mean;
            log_std - r + ((2.0 * r).exp() + d * d) * inv_two_var - 0.5
        })
        .sum())
}

/// Graph form of [`kl_to_prior`].
pub fn kl_var(g: &mut Graph, mu: Var, rho: Var, prior: &GaussianPrior) -> Result<Var> {
    prior.validate()?;
    let two_rho = g.scale(rho, 2.0)?;
    let var = g.exp(two_rho)?;
    let d = g.add_scalar(mu, -prior.mean)?;
    let d2 = g.mul(d, d)?;
    let s = g.add(var, d2)?;
    let s = g.scale(s, 1.0 / (2.0 * prior.std * prior.std))?;
    let t = g.sub(s, rho)?;
    let t = g.add_scalar(t, prior.std.ln() - 0.5)?;
    g.sum(t)
}

/// `(1/R) sum_r p(y | x, theta_r)` with `theta_r ~ q`, draws keyed by
/// `(seed, r)`.
pub fn ensemble_predict(
    post: &VariationalPosterior,
    spec: &MlpSpec,
    x: &Tensor,
    samples: usize,
    seed: u64,
) -> Result<Tensor> {
    if samples == 0 {
        return Err(invalid("ensemble needs at least one sample"));
    }
    let mut acc: Option<Tensor> = None;
    for r in 0..samples {
        let mut rng = rng::stream(seed, &[tag::EVAL, r as u64]);
        let (theta, _) = sample_theta(post, spec, &mut rng)?;
        let p = models::predict_probs(spec, &theta, x)?;
        match &mut acc {
            None => acc = Some(p),
            Some(a) => a.data_mut().iter_mut().zip(p.data()).for_each(|(a, b)| *a += b),
        }
    }
    let mut out = acc.expect("samples >= 1");
    let inv = 1.0 / samples as f64;
    out.data_mut().iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}
