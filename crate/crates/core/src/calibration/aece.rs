use serde::{Deserialize, Serialize};

use super::scores::{argmax, smoothed_confidence_var, smoothed_correctness_var, TemperatureSpec};
use super::wmmce::{wmmce_var, KernelSpec};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Batch;
use crate::error::{invalid, Result};
use crate::models::{self, MlpSpec, ParamVector};

/// How confidence and correctness enter the WMMCE regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AeceMode {
    /// Hard scores. The decision is frozen at its current argmax, so
    /// confidence gradients flow only through `p(decision | x)` and
    /// correctness is a constant.
    Original,
    /// Smoothed-maximum confidence and sigmoid-rank correctness, both
    /// differentiable in the class probabilities.
    FullyDifferentiable,
}

impl std::fmt::Display for AeceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AeceMode::Original => "original",
            AeceMode::FullyDifferentiable => "fully-differentiable",
        })
    }
}

/// Differentiable calibration error of the class probabilities `probs`
/// (`n x K`, a graph node) against `labels`.
pub fn aece_var(
    g: &mut Graph,
    probs: Var,
    labels: &[usize],
    kernel: &KernelSpec,
    temps: &TemperatureSpec,
    mode: AeceMode,
) -> Result<Var> {
    if labels.len() < 2 {
        return Err(invalid(format!(
            "calibration regularizer needs a batch of at least 2, got {}",
            labels.len()
        )));
    }
    temps.validate()?;
    let (r, c) = match mode {
        AeceMode::Original => {
            let p = g.value(probs)?;
            let decisions: Vec<usize> = (0..labels.len()).map(|i| argmax(p.row(i))).collect();
            let correct: Vec<f64> = decisions
                .iter()
                .zip(labels)
                .map(|(d, y)| if d == y { 1.0 } else { 0.0 })
                .collect();
            let r = g.pick(probs, &decisions)?;
            let c = g.constant(Tensor::vector(correct));
            (r, c)
        }
        AeceMode::FullyDifferentiable => {
            let r = smoothed_confidence_var(g, probs, temps.tau_r)?;
            let c = smoothed_correctness_var(g, probs, labels, temps.tau_c)?;
            (r, c)
        }
    };
    wmmce_var(g, r, c, kernel)
}

/// Value of the regularizer for a network at `theta` on `batch`.
pub fn aece(
    theta: &ParamVector,
    spec: &MlpSpec,
    batch: &Batch,
    kernel: &KernelSpec,
    temps: &TemperatureSpec,
    mode: AeceMode,
) -> Result<f64> {
    let mut g = Graph::new();
    let t = g.constant(theta.to_tensor());
    let x = g.constant(batch.inputs.clone());
    let p = models::probs(&mut g, spec, t, x)?;
    let out = aece_var(&mut g, p, &batch.labels, kernel, temps, mode)?;
    g.scalar_value(out)
}
