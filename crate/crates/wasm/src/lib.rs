//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes and returns JSON strings. The plain-Rust functions
//! ([`train_demo`], [`score_curves`], [`wmmce_explorer`]) carry the logic so
//! they can be tested natively.

use calibra::autodiff::Tensor;
use calibra::calibration::{
    reliability_diagram, score_predictions, smoothed_confidence, smoothed_correctness, wmmce, KernelSpec,
};
use calibra::data::{split, synth_gaussian_blobs, BlobSpec, Standardizer};
use calibra::models::{Activation, MlpSpec};
use calibra::training::{evaluate, initial_state, train, Objective, OptimizerConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Core(#[from] calibra::Error),
    #[error("bad request: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, DemoError>;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct TrainRequest {
    pub objective: Objective,
    pub lambda: f64,
    pub seed: u64,
    pub epochs: usize,
    pub label_noise: f64,
    pub separation: f64,
    pub hidden: usize,
}

impl Default for TrainRequest {
    fn default() -> Self {
        Self {
            objective: Objective::CaFnn,
            lambda: 10.0,
            seed: 0,
            epochs: 60,
            label_noise: 0.2,
            separation: 2.5,
            hidden: 24,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub test_acc: f64,
    pub test_ece: f64,
}

#[derive(Debug, Serialize)]
pub struct BinPoint {
    pub left: f64,
    pub right: f64,
    pub count: usize,
    pub accuracy: Option<f64>,
    pub confidence: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct TrainResponse {
    pub accuracy: f64,
    pub ece: f64,
    pub mean_confidence: f64,
    pub epochs: Vec<EpochPoint>,
    pub bins: Vec<BinPoint>,
    /// Standardized test inputs `[x, y, label, predicted, confidence]`.
    pub points: Vec<[f64; 5]>,
}

/// Trains on 4-class noisy blobs (2-D, 150 points per class, 70% test) and
/// returns the learning curve, the reliability bins and the scored test set.
pub fn train_demo(req: &TrainRequest) -> Result<TrainResponse> {
    if req.epochs == 0 || req.epochs > 500 || req.hidden == 0 || req.hidden > 128 {
        return Err(DemoError::Invalid("epochs must be in 1..=500 and hidden in 1..=128".into()));
    }
    let blobs = BlobSpec {
        classes: 4,
        per_class: 150,
        dim: 2,
        separation: req.separation,
        label_noise: req.label_noise,
    };
    let (tr, te) = split(&synth_gaussian_blobs(&blobs, req.seed)?, 0.7, req.seed)?;
    let st = Standardizer::fit(&tr);
    let (tr, te) = (st.apply(&tr), st.apply(&te));
    let spec = MlpSpec::new(2, vec![req.hidden, req.hidden], 4, Activation::Relu)?;
    let mut cfg = TrainConfig {
        objective: req.objective,
        lambda: req.lambda,
        beta: 0.01,
        samples: 1,
        optimizer: OptimizerConfig::adam(0.01),
        batch_size: 20,
        epochs: req.epochs,
        seed: req.seed,
        eval_samples: 8,
        ..TrainConfig::default()
    };
    cfg.prior.std = 1.0;
    let (state, log) = train(&spec, initial_state(&spec, &cfg), &tr, &te, &cfg)?;
    let eval = evaluate(&state, &spec, &te, cfg.bins, cfg.eval_samples, cfg.seed)?;
    let points = eval
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let x = te.row(i);
            [x[0], x[1], te.labels()[i] as f64, r.decision as f64, r.confidence]
        })
        .collect();
    Ok(TrainResponse {
        accuracy: eval.report.accuracy,
        ece: eval.report.ece,
        mean_confidence: eval.report.mean_confidence,
        epochs: log
            .records
            .iter()
            .map(|r| EpochPoint { epoch: r.epoch, test_acc: r.test_acc, test_ece: r.test_ece })
            .collect(),
        bins: reliability_diagram(&eval.report)
            .into_iter()
            .map(|r| BinPoint {
                left: r.left_edge,
                right: r.right_edge,
                count: r.count,
                accuracy: r.accuracy,
                confidence: r.confidence,
            })
            .collect(),
        points,
    })
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    /// Probability of the true class; the rest is shared by the others.
    pub p_true: f64,
    pub hard_confidence: f64,
    pub smooth_confidence: f64,
    pub hard_correctness: f64,
    pub smooth_correctness: f64,
}

/// Hard and smoothed scores for a `classes`-way prediction as the true-class
/// probability sweeps `(0, 1)`, the other classes splitting the remainder
/// unevenly (60% / 40% / equal rest).
pub fn score_curves(classes: usize, tau_r: f64, tau_c: f64, points: usize) -> Result<Vec<CurvePoint>> {
    if !(2..=10).contains(&classes) || !(2..=2000).contains(&points) {
        return Err(DemoError::Invalid("classes must be in 2..=10 and points in 2..=2000".into()));
    }
    (1..points)
        .map(|i| {
            let p_true = i as f64 / points as f64;
            let probs = spread(p_true, classes);
            let rec = &score_predictions(&Tensor::matrix(1, classes, probs.clone())?, &[0])?[0];
            Ok(CurvePoint {
                p_true,
                hard_confidence: rec.confidence,
                smooth_confidence: smoothed_confidence(&probs, tau_r)?,
                hard_correctness: rec.correctness(),
                smooth_correctness: smoothed_correctness(&probs, 0, tau_c)?,
            })
        })
        .collect()
}

fn spread(p_true: f64, classes: usize) -> Vec<f64> {
    let rest = 1.0 - p_true;
    let mut p = vec![p_true];
    if classes == 2 {
        p.push(rest);
    } else {
        p.push(0.6 * rest);
        let share = 0.4 * rest / (classes - 2) as f64;
        p.extend(std::iter::repeat_n(share, classes - 2));
    }
    p
}

#[derive(Debug, Deserialize)]
pub struct WmmceRequest {
    pub confidences: Vec<f64>,
    pub correctness: Vec<f64>,
    pub bandwidth: f64,
}

#[derive(Debug, Serialize)]
pub struct WmmceResponse {
    pub wmmce: f64,
    /// Accuracy minus mean confidence, for comparison.
    pub global_gap: f64,
}

pub fn wmmce_explorer(req: &WmmceRequest) -> Result<WmmceResponse> {
    let n = req.confidences.len();
    if n == 0 || n != req.correctness.len() {
        return Err(DemoError::Invalid("need matching, non-empty confidence and correctness lists".into()));
    }
    let kernel = KernelSpec::new(req.bandwidth)?;
    let value = wmmce(&req.confidences, &req.correctness, &kernel)?;
    let acc = req.correctness.iter().sum::<f64>() / n as f64;
    let conf = req.confidences.iter().sum::<f64>() / n as f64;
    Ok(WmmceResponse { wmmce: value, global_gap: acc - conf })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    r.and_then(|v| Ok(serde_json::to_string(&v)?)).map_err(|e| JsError::new(&e.to_string()))
}

/// `request`: JSON [`TrainRequest`]; missing fields take their defaults.
#[wasm_bindgen(js_name = trainDemo)]
pub fn train_demo_js(request: &str) -> std::result::Result<String, JsError> {
    to_js(serde_json::from_str(request).map_err(DemoError::from).and_then(|r| train_demo(&r)))
}

#[wasm_bindgen(js_name = scoreCurves)]
pub fn score_curves_js(classes: usize, tau_r: f64, tau_c: f64, points: usize) -> std::result::Result<String, JsError> {
    to_js(score_curves(classes, tau_r, tau_c, points))
}

/// `request`: JSON [`WmmceRequest`].
#[wasm_bindgen(js_name = wmmceExplorer)]
pub fn wmmce_explorer_js(request: &str) -> std::result::Result<String, JsError> {
    to_js(serde_json::from_str(request).map_err(DemoError::from).and_then(|r| wmmce_explorer(&r)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_training_returns_consistent_tables() {
        let req = TrainRequest { epochs: 5, ..TrainRequest::default() };
        let out = train_demo(&req).unwrap();
        assert_eq!(out.epochs.len(), 5);
        assert_eq!(out.bins.len(), 15);
        assert_eq!(out.points.len(), out.bins.iter().map(|b| b.count).sum::<usize>());
        assert_eq!(out.epochs.last().unwrap().test_ece, out.ece);
        let correct = out.points.iter().filter(|p| p[2] == p[3]).count() as f64;
        assert!((correct / out.points.len() as f64 - out.accuracy).abs() < 1e-12);
    }

    #[test]
    fn request_defaults_and_validation() {
        let req: TrainRequest = serde_json::from_str(r#"{"objective":"bnn","epochs":2}"#).unwrap();
        assert_eq!((req.objective, req.lambda), (Objective::Bnn, 10.0));
        assert!(train_demo(&TrainRequest { epochs: 0, ..req }).is_err());
    }

    #[test]
    fn curves_approach_hard_scores_at_low_temperature() {
        let curves = score_curves(4, 1e-4, 1e-4, 50).unwrap();
        assert_eq!(curves.len(), 49);
        for c in &curves {
            assert!(c.smooth_confidence <= c.hard_confidence + 1e-12);
            let second = 0.6 * (1.0 - c.p_true);
            if (c.p_true - second).abs() >= 0.01 {
                assert!((c.smooth_confidence - c.hard_confidence).abs() < 1e-6);
                assert!((c.smooth_correctness - c.hard_correctness).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn explorer_reproduces_the_two_point_case() {
        let out = wmmce_explorer(&WmmceRequest {
            confidences: vec![0.9, 0.6],
            correctness: vec![1.0, 0.0],
            bandwidth: 0.4,
        })
        .unwrap();
        assert!((out.wmmce - 0.5597).abs() < 1e-4);
        assert!((out.global_gap - (0.5 - 0.75)).abs() < 1e-12);
        assert!(wmmce_explorer(&WmmceRequest { confidences: vec![0.5], correctness: vec![], bandwidth: 0.4 }).is_err());
    }
}
