use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{invalid, Error, Result};

/// Tolerance on row sums when validating probability vectors.
const PROB_SUM_TOL: f64 = 1e-6;

/// Smoothing temperatures for the differentiable confidence (`tau_r`) and
/// correctness (`tau_c`) scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSpec {
    pub tau_r: f64,
    pub tau_c: f64,
}

impl Default for TemperatureSpec {
    fn default() -> Self {
        Self {
            tau_r: 0.001,
            tau_c: 0.01,
        }
    }
}

impl TemperatureSpec {
    pub fn new(tau_r: f64, tau_c: f64) -> Result<Self> {
        let t = Self { tau_r, tau_c };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_r > 0.0 && self.tau_c > 0.0) {
            return Err(invalid(format!(
                "temperatures must be positive, got tau_r={} tau_c={}",
                self.tau_r, self.tau_c
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub probs: Vec<f64>,
    pub decision: usize,
    pub confidence: f64,
    pub correct: bool,
    pub label: usize,
}

impl PredictionRecord {
    pub fn correctness(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn check_probability_row(row: &[f64], i: usize) -> Result<()> {
    let total: f64 = row.iter().sum();
    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(invalid(format!("row {i} is not a probability vector")));
    }
    Ok(())
}

/// Hard decision, confidence and correctness for each row of `probs`.
pub fn score_predictions(probs: &Tensor, labels: &[usize]) -> Result<Vec<PredictionRecord>> {
    if probs.rank() != 2 || probs.shape()[0] != labels.len() {
        return Err(invalid(format!(
            "probabilities {:?} do not match {} labels",
            probs.shape(),
            labels.len()
        )));
    }
    let classes = probs.shape()[1];
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            let row = probs.row(i);
            check_probability_row(row, i)?;
            let decision = argmax(row);
            Ok(PredictionRecord {
                probs: row.to_vec(),
                decision,
                confidence: row[decision],
                correct: decision == label,
                label,
            })
        })
        .collect()
}

/// Softmax-weighted average of each row of `probs` (`n x K`) at temperature
/// `tau_r`: a smoothed maximum, shape `n`.
pub fn smoothed_confidence_var(g: &mut Graph, probs: Var, tau_r: f64) -> Result<Var> {
    let sharp = g.scale(probs, 1.0 / tau_r)?;
    let weights = g.softmax(sharp)?;
    let weighted = g.mul(probs, weights)?;
    g.sum_axis(weighted, 1)
}

/// Soft correctness `min(1, relu(2 - rank))`, where `rank` is the sigmoid
/// relaxation of the position of the true label among the class
/// probabilities. Shape `n`.
pub fn smoothed_correctness_var(g: &mut Graph, probs: Var, labels: &[usize], tau_c: f64) -> Result<Var> {
    let n = labels.len();
    let p_true = g.pick(probs, labels)?;
    let p_true = g.reshape(p_true, vec![n, 1])?;
    // gaps[i, y'] = p(y_i) - p(y')
    let gaps = g.sub(p_true, probs)?;
    let scaled = g.scale(gaps, -1.0 / tau_c)?;
    let beaten = g.sigmoid(scaled)?;
    let total = g.sum_axis(beaten, 1)?;
    // the y' = y_i column contributes sigmoid(0) = 1/2 and is not part of the rank
    let rank = g.add_scalar(total, 0.5)?;
    let margin = g.rsub_scalar(2.0, rank)?;
    let soft = g.relu(margin)?;
    g.clamp_max(soft, 1.0)
}

fn single_row(probs: &[f64]) -> Result<Tensor> {
    check_probability_row(probs, 0)?;
    Tensor::matrix(1, probs.len(), probs.to_vec())
}

pub fn smoothed_confidence(probs: &[f64], tau_r: f64) -> Result<f64> {
    if tau_r.is_nan() || tau_r <= 0.0 {
        return Err(invalid("tau_r must be positive"));
    }
    let mut g = Graph::new();
    let p = g.constant(single_row(probs)?);
    let r = smoothed_confidence_var(&mut g, p, tau_r)?;
    g.value(r)?.item()
}

pub fn smoothed_correctness(probs: &[f64], label: usize, tau_c: f64) -> Result<f64> {
    if tau_c.is_nan() || tau_c <= 0.0 {
        return Err(invalid("tau_c must be positive"));
    }
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    let mut g = Graph::new();
    let p = g.constant(single_row(probs)?);
    let c = smoothed_correctness_var(&mut g, p, &[label], tau_c)?;
    g.value(c)?.item()
}
