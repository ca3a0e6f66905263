use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{invalid, Result};

/// Bandwidth of the Laplacian kernel `exp(-|a - b| / bandwidth)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub bandwidth: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { bandwidth: 0.4 }
    }
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        let k = Self { bandwidth };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(invalid(format!("kernel bandwidth must be positive, got {}", self.bandwidth)));
        }
        Ok(())
    }
}

pub fn laplacian_kernel(a: f64, b: f64, k: &KernelSpec) -> f64 {
    (-(a - b).abs() / k.bandwidth).exp()
}

/// Weighted maximum mean calibration error of confidences `r` (shape `n`)
/// against correctness scores `c` (shape `n`, entries in `[0, 1]`).
///
/// With `u_i = (1 - c_i) r_i / sum(1 - c)` and `v_i = c_i (1 - r_i) / sum(c)`
/// the squared error is `(u - v)^T K (u - v)`, which expands to the
/// incorrect/incorrect, correct/correct and cross sums over all pairs
/// (diagonal included). Hard 0/1 scores select exactly those index sets; soft
/// scores weight each pair by the matching products of `c` and `1 - c`. A
/// side whose total weight is zero is dropped.
pub fn wmmce_var(g: &mut Graph, r: Var, c: Var, kernel: &KernelSpec) -> Result<Var> {
    kernel.validate()?;
    let n = g.value(r)?.len();
    if n == 0 {
        return Err(invalid("WMMCE of an empty batch"));
    }
    if g.value(c)?.len() != n {
        return Err(invalid(format!(
            "WMMCE: {n} confidences but {} correctness scores",
            g.value(c)?.len()
        )));
    }
    let r = g.reshape(r, vec![n, 1])?;
    let c = g.reshape(c, vec![n, 1])?;
    let wrong = g.rsub_scalar(1.0, c)?;
    let n_wrong = g.sum(wrong)?;
    let n_right = g.sum(c)?;

    let u = if g.scalar_value(n_wrong)? > 0.0 {
        let num = g.mul(wrong, r)?;
        Some(g.div(num, n_wrong)?)
    } else {
        None
    };
    let v = if g.scalar_value(n_right)? > 0.0 {
        let miss = g.rsub_scalar(1.0, r)?;
        let num = g.mul(c, miss)?;
        Some(g.div(num, n_right)?)
    } else {
        None
    };
    let w = match (u, v) {
        (Some(u), Some(v)) => g.sub(u, v)?,
        (Some(u), None) => u,
        (None, Some(v)) => g.neg(v)?,
        (None, None) => unreachable!("sum(c) + sum(1 - c) = n > 0"),
    };

    let r_row = g.reshape(r, vec![1, n])?;
    let dist = g.sub(r, r_row)?;
    let dist = g.abs(dist)?;
    let arg = g.scale(dist, -1.0 / kernel.bandwidth)?;
    let gram = g.exp(arg)?;
    let gw = g.matmul(gram, w)?;
    let quad = g.mul(w, gw)?;
    let s = g.sum(quad)?;

    // cancellation can leave s slightly negative; the sqrt backward is
    // offset so the derivative stays finite at s = 0
    let s = g.clamp_min(s, 0.0)?;
    g.sqrt(s)
}

/// Value-only form of [`wmmce_var`].
pub fn wmmce(confidences: &[f64], correctness: &[f64], kernel: &KernelSpec) -> Result<f64> {
    if confidences.len() != correctness.len() {
        return Err(invalid("confidence and correctness lengths differ"));
    }
    if correctness.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(invalid("correctness scores must lie in [0, 1]"));
    }
    let mut g = Graph::new();
    let r = g.constant(Tensor::vector(confidences.to_vec()));
    let c = g.constant(Tensor::vector(correctness.to_vec()));
    let out = wmmce_var(&mut g, r, c, kernel)?;
    g.scalar_value(out)
}
