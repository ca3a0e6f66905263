use calibra::autodiff::Tensor;
use calibra::data::{split, synth_gaussian_blobs, BlobSpec, Dataset};
use calibra::models::{init_params, Activation, MlpSpec};
use calibra::rng::stream;
use calibra::training::*;
use calibra::variational::*;
use rand::Rng;

fn log_normal(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

#[test]
fn closed_form_kl_matches_monte_carlo() {
    const S: usize = 100_000;
    for case in 0..20u64 {
        let mut rng = stream(case, &[30]);
        let n = rng.random_range(1..=4);
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rho: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..0.3)).collect();
        let prior = GaussianPrior::new(rng.random_range(-0.3..0.3), rng.random_range(0.3..2.0)).unwrap();
        let post = VariationalPosterior::new(mu.clone(), rho.clone()).unwrap();
        let closed = kl_to_prior(&post, &prior).unwrap();
        assert!(closed >= 0.0);

        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..S {
            let eps = standard_normal(n, &mut rng);
            let theta = post.theta_from_eps(&eps);
            let ratio: f64 = (0..n)
                .map(|i| log_normal(theta[i], mu[i], rho[i].exp()) - log_normal(theta[i], prior.mean, prior.std))
                .sum();
            sum += ratio;
            sq += ratio * ratio;
        }
        let mean = sum / S as f64;
        let se = ((sq / S as f64 - mean * mean) / S as f64).sqrt();
        assert!((mean - closed).abs() <= 3.0 * se, "case {case}: mc {mean} ± {se} vs {closed}");
    }
}

#[test]
fn sampled_parameters_centre_on_the_mean() {
    const S: usize = 100_000;
    let spec = MlpSpec::new(2, vec![3], 2, Activation::Tanh).unwrap();
    let theta = init_params(&spec, 4);
    let mut rng = stream(8, &[31]);
    let rho: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-3.0..0.0)).collect();
    let post = VariationalPosterior::new(theta.values().to_vec(), rho).unwrap();
    let mut sum = vec![0.0; post.len()];
    for _ in 0..S {
        let (t, _) = sample_theta(&post, &spec, &mut rng).unwrap();
        sum.iter_mut().zip(t.values()).for_each(|(s, v)| *s += v);
    }
    for i in 0..post.len() {
        let mean = sum[i] / S as f64;
        assert!((mean - post.mu()[i]).abs() <= 4.0 * post.rho()[i].exp() / (S as f64).sqrt());
    }
}

#[test]
fn large_ensembles_agree_across_seeds() {
    let spec = MlpSpec::new(2, vec![3], 2, Activation::Tanh).unwrap();
    let post = VariationalPosterior::from_params(&init_params(&spec, 2), -1.0);
    let x = Tensor::matrix(4, 2, vec![0.0, 0.0, 1.0, -1.0, -2.0, 0.5, 3.0, 3.0]).unwrap();
    let a = ensemble_predict(&post, &spec, &x, 10_000, 1).unwrap();
    let b = ensemble_predict(&post, &spec, &x, 10_000, 2).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() < 0.01);
    }
}

fn blobs(classes: usize, separation: f64, noise: f64, per_class: usize, seed: u64) -> (Dataset, Dataset) {
    let spec = BlobSpec { classes, per_class, dim: 2, separation, label_noise: noise };
    split(&synth_gaussian_blobs(&spec, seed).unwrap(), 0.3, seed).unwrap()
}

#[test]
fn collapsed_posterior_without_kl_tracks_the_point_estimate() {
    let (tr, te) = blobs(3, 3.0, 0.05, 48, 1);
    // ten optimizer steps
    let batch_size = tr.len().div_ceil(10);
    let spec = MlpSpec::new(2, vec![8], 3, Activation::Tanh).unwrap();
    let fnn = TrainConfig { objective: Objective::Fnn, epochs: 1, batch_size, ..TrainConfig::default() };
    let bnn = TrainConfig { objective: Objective::Bnn, beta: 0.0, rho_init: -20.0, eval_samples: 1, ..fnn.clone() };
    let (point, _) = train(&spec, initial_state(&spec, &fnn), &tr, &te, &fnn).unwrap();
    let (post, _) = train(&spec, initial_state(&spec, &bnn), &tr, &te, &bnn).unwrap();
    let (ModelState::Point(theta), ModelState::Posterior(q)) = (point, post) else { panic!() };
    for (a, b) in theta.values().iter().zip(q.mu()) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn zero_lambda_runs_match_their_base_objective() {
    let (tr, te) = blobs(3, 3.0, 0.1, 40, 2);
    let spec = MlpSpec::new(2, vec![6], 3, Activation::Relu).unwrap();
    for (ca, base) in [(Objective::CaFnn, Objective::Fnn), (Objective::CaBnn, Objective::Bnn)] {
        let a = TrainConfig { objective: ca, lambda: 0.0, epochs: 3, batch_size: 16, eval_samples: 4, ..TrainConfig::default() };
        let b = TrainConfig { objective: base, ..a.clone() };
        let (sa, la) = train(&spec, initial_state(&spec, &a), &tr, &te, &a).unwrap();
        let (sb, lb) = train(&spec, initial_state(&spec, &b), &tr, &te, &b).unwrap();
        assert_eq!(sa, sb);
        for (x, y) in la.records.iter().zip(&lb.records) {
            assert_eq!((x.train_loss, x.test_acc, x.test_ece, x.kl), (y.train_loss, y.test_acc, y.test_ece, y.kl));
        }
    }
}

fn fnn_accuracy(tr: &Dataset, te: &Dataset, classes: usize, epochs: usize) -> f64 {
    let spec = MlpSpec::new(2, vec![16], classes, Activation::Relu).unwrap();
    let cfg = TrainConfig {
        objective: Objective::Fnn,
        epochs,
        batch_size: 32,
        optimizer: OptimizerConfig::adam(0.01),
        ..TrainConfig::default()
    };
    let (_, log) = train(&spec, initial_state(&spec, &cfg), tr, te, &cfg).unwrap();
    log.last().unwrap().test_acc
}

#[test]
fn well_separated_blobs_are_learned() {
    let (tr, te) = blobs(4, 10.0, 0.0, 100, 3);
    let acc = fnn_accuracy(&tr, &te, 4, 30);
    assert!(acc > 0.99, "{acc}");
}

#[test]
fn separable_two_class_problem_is_learned() {
    let (tr, te) = blobs(2, 6.0, 0.0, 150, 4);
    let acc = fnn_accuracy(&tr, &te, 2, 50);
    assert!(acc > 0.95, "{acc}");
}
