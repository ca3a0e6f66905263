//! Gradient oracles for every training objective, plus the collapse and
//! scaling properties of the Bayesian estimator.

use calibra::autodiff::{Graph, Tensor};
use calibra::calibration::{aece, aece_var, AeceMode, KernelSpec, TemperatureSpec};
use calibra::data::{batch_indices, Batch};
use calibra::models::{self, init_params, Activation, MlpSpec, ParamVector};
use calibra::rng::stream;
use calibra::training::*;
use calibra::variational::{kl_to_prior, kl_var, GaussianPrior, VariationalPosterior};
use rand::Rng;

const H: f64 = 1e-5;

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + H;
            let up = f(&x);
            x[i] = orig - H;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn assert_close(name: &str, analytic: &[f64], numeric: &[f64], rel: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let tol = rel * a.abs().max(n.abs()) + 1e-8;
        assert!((a - n).abs() <= tol, "{name}[{i}]: analytic {a} vs numeric {n}");
    }
}

struct Instance {
    spec: MlpSpec,
    theta: ParamVector,
    batch: Batch,
}

/// Random one-hidden-layer tanh MLP (at most a few hundred parameters) and
/// a labelled batch.
fn instance(case: u64) -> Instance {
    let mut rng = stream(case, &[20]);
    let d = rng.random_range(1..=4);
    let h = rng.random_range(2..=10);
    let k = rng.random_range(2..=4);
    let n = rng.random_range(4..=10);
    let spec = MlpSpec::new(d, vec![h], k, Activation::Tanh).unwrap();
    assert!(spec.param_count() <= 500);
    let theta = init_params(&spec, case);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    let batch = Batch::new(Tensor::matrix(n, d, x).unwrap(), labels).unwrap();
    Instance { spec, theta, batch }
}

/// Temperatures soft enough for step-1e-5 differences to resolve the
/// curvature of the smoothed scores.
fn fd_temps() -> TemperatureSpec {
    TemperatureSpec::new(0.05, 0.1).unwrap()
}

#[test]
fn cross_entropy_gradient_on_100_instances() {
    for case in 0..100 {
        let Instance { spec, theta, batch } = instance(case);
        let cfg = TrainConfig { objective: Objective::Fnn, ..TrainConfig::default() };
        let out = frequentist_gradient(&theta, &spec, &batch, &cfg).unwrap();
        let fd = central_diff(
            |v| models::cross_entropy(&spec, &ParamVector::new(&spec, v.to_vec()).unwrap(), &batch).unwrap(),
            theta.values(),
        );
        assert_close(&format!("ce case {case}"), &out.grad, &fd, 1e-4);
    }
}

#[test]
fn kl_gradient_on_100_posteriors() {
    for case in 0..100 {
        let mut rng = stream(case, &[21]);
        let n = rng.random_range(1..=50);
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rho: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..0.5)).collect();
        let prior = GaussianPrior::new(rng.random_range(-0.5..0.5), rng.random_range(0.05..2.0)).unwrap();
        let mut g = Graph::new();
        let m = g.param(Tensor::vector(mu.clone()));
        let r = g.param(Tensor::vector(rho.clone()));
        let kl = kl_var(&mut g, m, r, &prior).unwrap();
        let grads = g.backward(kl).unwrap();
        let mut analytic = grads.wrt(m).unwrap().data().to_vec();
        analytic.extend_from_slice(grads.wrt(r).unwrap().data());
        let mut phi = mu.clone();
        phi.extend(&rho);
        let fd = central_diff(
            |p| kl_to_prior(&VariationalPosterior::new(p[..n].to_vec(), p[n..].to_vec()).unwrap(), &prior).unwrap(),
            &phi,
        );
        assert_close(&format!("kl case {case}"), &analytic, &fd, 1e-4);
    }
}

#[test]
fn aece_gradient_on_100_instances() {
    let kernel = KernelSpec::default();
    let temps = fd_temps();
    for case in 0..100 {
        let Instance { spec, theta, batch } = instance(case);
        let mut g = Graph::new();
        let t = g.param(theta.to_tensor());
        let x = g.constant(batch.inputs.clone());
        let p = models::probs(&mut g, &spec, t, x).unwrap();
        let a = aece_var(&mut g, p, &batch.labels, &kernel, &temps, AeceMode::FullyDifferentiable).unwrap();
        let analytic = g.backward(a).unwrap().wrt(t).unwrap().data().to_vec();
        let fd = central_diff(
            |v| {
                let th = ParamVector::new(&spec, v.to_vec()).unwrap();
                aece(&th, &spec, &batch, &kernel, &temps, AeceMode::FullyDifferentiable).unwrap()
            },
            theta.values(),
        );
        assert_close(&format!("aece case {case}"), &analytic, &fd, 1e-3);
    }
}

#[test]
fn ca_bnn_frozen_noise_gradient_on_100_instances() {
    for case in 0..100 {
        let Instance { spec, theta, batch } = instance(case);
        let mut rng = stream(case, &[22]);
        let rho: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-4.0..-1.0)).collect();
        let post = VariationalPosterior::new(theta.values().to_vec(), rho).unwrap();
        let cfg = TrainConfig {
            objective: Objective::CaBnn,
            lambda: 2.0,
            beta: 0.3,
            samples: 2,
            temps: fd_temps(),
            prior: GaussianPrior::new(0.0, 0.5).unwrap(),
            seed: case,
            ..TrainConfig::default()
        };
        let full = 5 * batch.len();
        let eps = noise_draws(post.len(), cfg.samples, cfg.seed, 0);
        let out = bayesian_gradient(&post, &spec, &batch, full, &cfg, &eps).unwrap();
        assert_eq!(out, ca_bnn_step_gradient(&post, &spec, &batch, full, &cfg, 0).unwrap());
        let n = post.len();
        let fd = central_diff(
            |phi| {
                let q = VariationalPosterior::new(phi[..n].to_vec(), phi[n..].to_vec()).unwrap();
                bayesian_objective(&q, &spec, &batch, full, &cfg, &eps).unwrap()
            },
            &post.phi(),
        );
        assert_close(&format!("ca-bnn case {case}"), &out.grad, &fd, 1e-3);
    }
}

#[test]
fn lambda_zero_collapses_both_families() {
    for case in 0..10 {
        let Instance { spec, theta, batch } = instance(case);
        let post = VariationalPosterior::from_params(&theta, -2.0);
        let ca = TrainConfig { objective: Objective::CaBnn, lambda: 0.0, samples: 3, seed: case, ..TrainConfig::default() };
        let bnn = TrainConfig { objective: Objective::Bnn, lambda: 7.0, ..ca.clone() };
        let eps = noise_draws(post.len(), 3, case, 4);
        let a = bayesian_objective(&post, &spec, &batch, 50, &ca, &eps).unwrap();
        let b = bayesian_objective(&post, &spec, &batch, 50, &bnn, &eps).unwrap();
        assert!((a - b).abs() <= 1e-12);

        let cafnn = TrainConfig { objective: Objective::CaFnn, lambda: 0.0, ..TrainConfig::default() };
        let fnn = TrainConfig { objective: Objective::Fnn, ..TrainConfig::default() };
        assert_eq!(
            frequentist_gradient(&theta, &spec, &batch, &cafnn).unwrap(),
            frequentist_gradient(&theta, &spec, &batch, &fnn).unwrap()
        );
    }
}

#[test]
fn kl_weights_sum_to_beta_over_an_epoch() {
    let Instance { spec, theta, .. } = instance(3);
    let mut rng = stream(9, &[23]);
    let n = 23;
    let d = spec.input_dim;
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.class_count)).collect();
    let post = VariationalPosterior::from_params(&theta, -1.5);
    let prior = GaussianPrior::new(0.1, 0.3).unwrap();
    let with = TrainConfig { objective: Objective::Bnn, beta: 0.4, prior, ..TrainConfig::default() };
    let without = TrainConfig { beta: 0.0, ..with.clone() };

    let mut total = vec![0.0; 2 * post.len()];
    for (step, idx) in batch_indices(n, 5, 1).unwrap().iter().enumerate() {
        let batch = Batch::new(
            Tensor::matrix(idx.len(), d, idx.iter().flat_map(|&i| x[i * d..(i + 1) * d].to_vec()).collect()).unwrap(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
        .unwrap();
        let a = ca_bnn_step_gradient(&post, &spec, &batch, n, &with, step as u64).unwrap();
        let b = ca_bnn_step_gradient(&post, &spec, &batch, n, &without, step as u64).unwrap();
        for (t, (x, y)) in total.iter_mut().zip(a.grad.iter().zip(&b.grad)) {
            *t += x - y;
        }
    }
    // closed-form KL gradient
    let var = prior.std * prior.std;
    let n_p = post.len();
    for i in 0..n_p {
        let g_mu = (post.mu()[i] - prior.mean) / var;
        let g_rho = -1.0 + (2.0 * post.rho()[i]).exp() / var;
        assert!((total[i] - 0.4 * g_mu).abs() < 1e-9);
        assert!((total[n_p + i] - 0.4 * g_rho).abs() < 1e-9);
    }
}

#[test]
fn gradient_variance_shrinks_with_samples() {
    let Instance { spec, theta, batch } = instance(17);
    let post = VariationalPosterior::from_params(&theta, -0.5);
    let variance = |r: usize| {
        let cfg = TrainConfig { objective: Objective::CaBnn, lambda: 1.0, samples: r, temps: fd_temps(), ..TrainConfig::default() };
        let norms: Vec<f64> = (0..100)
            .map(|step| {
                let g = ca_bnn_step_gradient(&post, &spec, &batch, 40, &cfg, step).unwrap().grad;
                g.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        let mean = norms.iter().sum::<f64>() / 100.0;
        norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0
    };
    let (v1, v4, v16) = (variance(1), variance(4), variance(16));
    assert!(v4 <= v1 * 1.1 && v16 <= v4 * 1.1, "{v1} {v4} {v16}");
    assert!(v16 < v1);
}

#[test]
fn adam_converges_on_a_quadratic() {
    let cfg = OptimizerConfig::adam(0.05);
    let mut state = OptimizerState::new();
    let mut p = [-2.0];
    for _ in 0..500 {
        let g = [2.0 * (p[0] - 1.5)];
        optimizer_step(&mut state, &mut p, &g, &cfg).unwrap();
    }
    assert!((p[0] - 1.5).abs() < 1e-3, "{}", p[0]);
}
