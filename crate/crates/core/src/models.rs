//! Softmax multilayer perceptrons over a flat parameter vector.
//!
//! Every model parameter lives in one contiguous vector so that a variational
//! posterior can treat the network as a single `N`-dimensional point. The
//! layout maps slices of that vector back to weight matrices and bias vectors.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Batch;
use crate::error::{invalid, Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub class_count: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        class_count: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            class_count,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(invalid(format!("class count must be at least 2, got {}", self.class_count)));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(invalid("all layer widths must be positive"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden_dims);
        widths.push(self.class_count);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn layout(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        let mut slots = Vec::new();
        for (l, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            slots.push(LayerSlot {
                name: format!("layer{l}.weight"),
                offset,
                shape: vec![fan_in, fan_out],
            });
            offset += fan_in * fan_out;
            slots.push(LayerSlot {
                name: format!("layer{l}.bias"),
                offset,
                shape: vec![fan_out],
            });
            offset += fan_out;
        }
        slots
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlot {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayerSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All parameters of an [`MlpSpec`] network as one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerSlot>,
}

impl ParamVector {
    pub fn new(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        let expected = spec.param_count();
        if values.len() != expected {
            return Err(invalid(format!(
                "parameter vector has {} entries, spec needs {expected}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            layout: spec.layout(),
        })
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            layout: spec.layout(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[LayerSlot] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len()])
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.values.clone())
    }
}

/// Weights ~ N(0, 1/fan_in), biases zero.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamVector {
    let mut rng = rng::stream(seed, &[tag::INIT]);
    let mut theta = ParamVector::zeros(spec);
    for slot in spec.layout() {
        if slot.shape.len() != 2 {
            continue;
        }
        let std = 1.0 / (slot.shape[0] as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for v in &mut theta.values[slot.offset..slot.offset + slot.len()] {
            *v = normal.sample(&mut rng);
        }
    }
    theta
}

fn check_inputs(spec: &MlpSpec, x: &Tensor) -> Result<()> {
    if x.rank() != 2 || x.shape()[1] != spec.input_dim {
        return Err(Error::ShapeMismatch {
            op: "mlp input",
            lhs: x.shape().to_vec(),
            rhs: vec![spec.input_dim],
        });
    }
    Ok(())
}

/// Pre-softmax scores, `batch x class_count`.
pub fn logits(g: &mut Graph, spec: &MlpSpec, theta: Var, x: Var) -> Result<Var> {
    check_inputs(spec, g.value(x)?)?;
    if g.value(theta)?.len() != spec.param_count() {
        return Err(Error::ShapeMismatch {
            op: "mlp parameters",
            lhs: g.value(theta)?.shape().to_vec(),
            rhs: vec![spec.param_count()],
        });
    }
    let layout = spec.layout();
    let layers = layout.len() / 2;
    let mut h = x;
    for (l, pair) in layout.chunks(2).enumerate() {
        let w = g.slice(theta, pair[0].offset, pair[0].shape.clone())?;
        let b = g.slice(theta, pair[1].offset, pair[1].shape.clone())?;
        let z = g.matmul(h, w)?;
        h = g.add(z, b)?;
        if l + 1 < layers {
            h = match spec.activation {
                Activation::Relu => g.relu(h)?,
                Activation::Tanh => g.tanh(h)?,
            };
        }
    }
    Ok(h)
}

/// Class probabilities `p(y | x, theta)` inside a graph.
pub fn probs(g: &mut Graph, spec: &MlpSpec, theta: Var, x: Var) -> Result<Var> {
    let z = logits(g, spec, theta, x)?;
    g.softmax(z)
}

/// `-sum_i log p(y_i | x_i, theta)` inside a graph, via a stable log-softmax.
pub fn cross_entropy_var(
    g: &mut Graph,
    spec: &MlpSpec,
    theta: Var,
    x: Var,
    labels: &[usize],
) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= spec.class_count) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: spec.class_count,
        });
    }
    let z = logits(g, spec, theta, x)?;
    nll_from_logits(g, z, labels)
}

/// `-sum_i log softmax(z)_i[y_i]` for logits already in the graph.
pub fn nll_from_logits(g: &mut Graph, z: Var, labels: &[usize]) -> Result<Var> {
    let logp = g.log_softmax(z)?;
    let picked = g.pick(logp, labels)?;
    let total = g.sum(picked)?;
    g.neg(total)
}

pub fn predict_probs(spec: &MlpSpec, theta: &ParamVector, x: &Tensor) -> Result<Tensor> {
    check_inputs(spec, x)?;
    let mut g = Graph::new();
    let t = g.constant(theta.to_tensor());
    let xv = g.constant(x.clone());
    let p = probs(&mut g, spec, t, xv)?;
    Ok(g.value(p)?.clone())
}

pub fn cross_entropy(spec: &MlpSpec, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    let mut g = Graph::new();
    let t = g.constant(theta.to_tensor());
    let xv = g.constant(batch.inputs.clone());
    let ce = cross_entropy_var(&mut g, spec, t, xv, &batch.labels)?;
    g.scalar_value(ce)
}
