use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{axis_split, matmul, reduce_to_shape, transpose, zip_broadcast, Tensor};
use crate::error::{invalid, Error, Result};

/// Added under the square root in the backward of [`Graph::sqrt`] so the
/// derivative stays finite at zero.
pub const SQRT_GRAD_EPS: f64 = 1e-12;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Sqrt(usize),
    Abs(usize),
    Powf(usize, f64),
    Scale(usize, f64),
    AddScalar(usize),
    ClampMin(usize, f64),
    ClampMax(usize, f64),
    SumAll(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    /// Evaluation-only: no gradient flows through it.
    MaxAxis,
    Softmax(usize),
    LogSoftmax(usize),
    Reshape(usize),
    Slice { src: usize, offset: usize },
    Pick { src: usize, indices: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only tape of primitive operations.
///
/// Nodes are stored in creation order, which is also a topological order:
/// every input of a node was appended before it. A graph is meant to be built
/// for one forward/backward pass and then dropped.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignTensor);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            graph: self.id,
            index,
        }
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Registers a leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Param, true)
    }

    /// Registers a leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        self.value(v)?.item()
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        make: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = zip_broadcast(name, &self.nodes[ia].value, &self.nodes[ib].value, f)?;
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(value, make(ia, ib), needs))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.nodes[ia].value.map(f);
        let needs = self.needs(ia);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", Op::Div, |x, y| x / y)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = matmul(&self.nodes[ia].value, &self.nodes[ib].value)?;
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(value, Op::MatMul(ia, ib), needs))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Neg(ia), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Exp(ia), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Log(ia), f64::ln)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Relu(ia), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Tanh(ia), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Sigmoid(ia), logistic)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Sqrt(ia), f64::sqrt)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Abs(ia), f64::abs)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Powf(ia, p), |x| x.powf(p))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Scale(ia, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::AddScalar(ia), |x| x + c)
    }

    /// `c - a`, elementwise.
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.add_scalar(n, c)
    }

    /// `max(a, lo)`; gradient is zero where the clamp is active.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::ClampMin(ia, lo), |x| x.max(lo))
    }

    /// `min(a, hi)`; gradient is zero where the clamp is active.
    pub fn clamp_max(&mut self, a: Var, hi: f64) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::ClampMax(ia, hi), |x| x.min(hi))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let total = self.nodes[ia].value.data().iter().sum();
        let needs = self.needs(ia);
        Ok(self.push(Tensor::scalar(total), Op::SumAll(ia), needs))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.nodes[ia].value.sum_axis(axis)?;
        let needs = self.needs(ia);
        Ok(self.push(value, Op::SumAxis(ia, axis), needs))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let len = axis_split(self.nodes[ia].value.shape(), axis)?.len;
        let value = self.nodes[ia].value.sum_axis(axis)?.map(|x| x / len as f64);
        let needs = self.needs(ia);
        Ok(self.push(value, Op::MeanAxis(ia, axis), needs))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let n = self.nodes[ia].value.len();
        if n == 0 {
            return Err(invalid("mean of an empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Maximum along `axis`. The result is recorded as a constant.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.nodes[ia].value.max_axis(axis)?;
        Ok(self.push(value, Op::MaxAxis, false))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = softmax_rows(&self.nodes[ia].value, false)?;
        let needs = self.needs(ia);
        Ok(self.push(value, Op::Softmax(ia), needs))
    }

    /// Log-softmax over the last axis, computed with the row maximum subtracted.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = softmax_rows(&self.nodes[ia].value, true)?;
        let needs = self.needs(ia);
        Ok(self.push(value, Op::LogSoftmax(ia), needs))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let ia = self.check(a)?;
        let shape = shape.into();
        let src = &self.nodes[ia].value;
        if shape.iter().product::<usize>() != src.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: src.shape().to_vec(),
                rhs: shape,
            });
        }
        let value = src.reshaped(shape)?;
        let needs = self.needs(ia);
        Ok(self.push(value, Op::Reshape(ia), needs))
    }

    /// Contiguous window `[offset, offset + prod(shape))` of the flattened
    /// input, reshaped to `shape`.
    pub fn slice(&mut self, a: Var, offset: usize, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let ia = self.check(a)?;
        let shape = shape.into();
        let len: usize = shape.iter().product();
        let src = &self.nodes[ia].value;
        if offset + len > src.len() {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: src.shape().to_vec(),
                rhs: shape,
            });
        }
        let value = Tensor::new(shape, src.data()[offset..offset + len].to_vec())?;
        let needs = self.needs(ia);
        Ok(self.push(value, Op::Slice { src: ia, offset }, needs))
    }

    /// Selects `a[i, indices[i]]` from a rank-2 tensor, giving a vector.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let src = &self.nodes[ia].value;
        if src.rank() != 2 || src.shape()[0] != indices.len() {
            return Err(Error::ShapeMismatch {
                op: "pick",
                lhs: src.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let cols = src.shape()[1];
        let mut out = Vec::with_capacity(indices.len());
        for (i, &k) in indices.iter().enumerate() {
            if k >= cols {
                return Err(invalid(format!("pick: index {k} out of range for {cols} columns")));
            }
            out.push(src.data()[i * cols + k]);
        }
        let needs = self.needs(ia);
        Ok(self.push(
            Tensor::vector(out),
            Op::Pick {
                src: ia,
                indices: indices.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let r = self.check(root)?;
        let root_value = &self.nodes[r].value;
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; r + 1];
        adj[r] = Some(Tensor::full(root_value.shape().to_vec(), 1.0));

        for i in (0..=r).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Param => {
                    adj[i] = Some(g);
                }
                Op::Constant | Op::MaxAxis => {}
                &Op::Add(a, b) => {
                    self.accumulate(&mut adj, a, || reduce_to_shape(&g, self.shape(a)));
                    self.accumulate(&mut adj, b, || reduce_to_shape(&g, self.shape(b)));
                }
                &Op::Sub(a, b) => {
                    self.accumulate(&mut adj, a, || reduce_to_shape(&g, self.shape(a)));
                    self.accumulate(&mut adj, b, || reduce_to_shape(&g, self.shape(b)).map(|x| -x));
                }
                &Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                    self.accumulate(&mut adj, a, || {
                        reduce_to_shape(&zip_broadcast("mul", &g, vb, |x, y| x * y).unwrap(), va.shape())
                    });
                    self.accumulate(&mut adj, b, || {
                        reduce_to_shape(&zip_broadcast("mul", &g, va, |x, y| x * y).unwrap(), vb.shape())
                    });
                }
                &Op::Div(a, b) => {
                    let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                    self.accumulate(&mut adj, a, || {
                        reduce_to_shape(&zip_broadcast("div", &g, vb, |x, y| x / y).unwrap(), va.shape())
                    });
                    self.accumulate(&mut adj, b, || {
                        // d(a/b)/db = -y/b
                        let gy = zip_broadcast("div", &g, &node.value, |x, y| -x * y).unwrap();
                        reduce_to_shape(&zip_broadcast("div", &gy, vb, |x, y| x / y).unwrap(), vb.shape())
                    });
                }
                &Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                    self.accumulate(&mut adj, a, || matmul(&g, &transpose(vb)).unwrap());
                    self.accumulate(&mut adj, b, || matmul(&transpose(va), &g).unwrap());
                }
                &Op::Neg(a) => self.accumulate(&mut adj, a, || g.map(|x| -x)),
                &Op::Exp(a) => self.accumulate(&mut adj, a, || mul_same(&g, &node.value, |gi, y| gi * y)),
                &Op::Log(a) => {
                    let va = &self.nodes[a].value;
                    self.accumulate(&mut adj, a, || mul_same(&g, va, |gi, x| gi / x))
                }
                &Op::Relu(a) => {
                    let va = &self.nodes[a].value;
                    self.accumulate(&mut adj, a, || {
                        mul_same(&g, va, |gi, x| if x > 0.0 { gi } else { 0.0 })
                    })
                }
                &Op::Tanh(a) => self.accumulate(&mut adj, a, || {
                    mul_same(&g, &node.value, |gi, y| gi * (1.0 - y * y))
                }),
                &Op::Sigmoid(a) => self.accumulate(&mut adj, a, || {
                    mul_same(&g, &node.value, |gi, y| gi * y * (1.0 - y))
                }),
                &Op::Sqrt(a) => {
                    let va = &self.nodes[a].value;
                    self.accumulate(&mut adj, a, || {
                        mul_same(&g, va, |gi, x| gi * 0.5 / (x.max(0.0) + SQRT_GRAD_EPS).sqrt())
                    })
                }
                &Op::Abs(a) => {
                    let va = &self.nodes[a].value;
                    self.accumulate(&mut adj, a, || {
                        mul_same(&g, va, |gi, x| {
                            if x > 0.0 {
                                gi
                            } else if x < 0.0 {
                                -gi
                            } else {
                                0.0
                            }
                        })
                    })
                }
                &Op::Powf(a, p) => {
                    let va = &self.nodes[a].value;
                    self.accumulate(&mut adj, a, || mul_same(&g, va, |gi, x| gi * p * x.powf(p - 1.0)))
                }
                &Op::Scale(a, c) => self.accumulate(&mut adj, a, || g.map(|x| x * c)),
                &Op::AddScalar(a) => self.accumulate(&mut adj, a, || g.clone()),
                &Op::ClampMin(a, lo) => {
                    let va = &self.nodes[a].value;
                    self.accumulate(&mut adj, a, || {
                        mul_same(&g, va, |gi, x| if x >= lo { gi } else { 0.0 })
                    })
                }
                &Op::ClampMax(a, hi) => {
                    let va = &self.nodes[a].value;
                    self.accumulate(&mut adj, a, || {
                        mul_same(&g, va, |gi, x| if x <= hi { gi } else { 0.0 })
                    })
                }
                &Op::SumAll(a) => {
                    let gi = g.data()[0];
                    self.accumulate(&mut adj, a, || Tensor::full(self.shape(a).to_vec(), gi))
                }
                &Op::SumAxis(a, axis) => {
                    self.accumulate(&mut adj, a, || expand_axis(&g, self.shape(a), axis, 1.0))
                }
                &Op::MeanAxis(a, axis) => {
                    let len = self.shape(a)[axis] as f64;
                    self.accumulate(&mut adj, a, || expand_axis(&g, self.shape(a), axis, 1.0 / len))
                }
                &Op::Softmax(a) => {
                    let y = &node.value;
                    self.accumulate(&mut adj, a, || {
                        let cols = last_dim(y);
                        let mut out = vec![0.0; y.len()];
                        for ((o, gr), yr) in out
                            .chunks_mut(cols)
                            .zip(g.data().chunks(cols))
                            .zip(y.data().chunks(cols))
                        {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for k in 0..cols {
                                o[k] = yr[k] * (gr[k] - dot);
                            }
                        }
                        Tensor::new(y.shape().to_vec(), out).unwrap()
                    })
                }
                &Op::LogSoftmax(a) => {
                    let y = &node.value;
                    self.accumulate(&mut adj, a, || {
                        let cols = last_dim(y);
                        let mut out = vec![0.0; y.len()];
                        for ((o, gr), yr) in out
                            .chunks_mut(cols)
                            .zip(g.data().chunks(cols))
                            .zip(y.data().chunks(cols))
                        {
                            let total: f64 = gr.iter().sum();
                            for k in 0..cols {
                                o[k] = gr[k] - yr[k].exp() * total;
                            }
                        }
                        Tensor::new(y.shape().to_vec(), out).unwrap()
                    })
                }
                &Op::Reshape(a) => self.accumulate(&mut adj, a, || g.reshaped(self.shape(a).to_vec()).unwrap()),
                &Op::Slice { src, offset } => self.accumulate(&mut adj, src, || {
                    let mut full = Tensor::zeros(self.shape(src).to_vec());
                    full.data_mut()[offset..offset + g.len()].copy_from_slice(g.data());
                    full
                }),
                Op::Pick { src, indices } => {
                    let src = *src;
                    self.accumulate(&mut adj, src, || {
                        let mut full = Tensor::zeros(self.shape(src).to_vec());
                        let cols = self.shape(src)[1];
                        for (i, &k) in indices.iter().enumerate() {
                            full.data_mut()[i * cols + k] = g.data()[i];
                        }
                        full
                    })
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| match node.op {
                Op::Param => Some(
                    adj.get_mut(i)
                        .and_then(Option::take)
                        .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec())),
                ),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }

    fn shape(&self, i: usize) -> &[usize] {
        self.nodes[i].value.shape()
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], target: usize, grad: impl FnOnce() -> Tensor) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let g = grad();
        match &mut adj[target] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

/// Result of [`Graph::backward`]: one gradient per parameter leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a parameter leaf. Unused parameters yield zeros.
    pub fn wrt(&self, v: Var) -> Result<&Tensor> {
        if v.graph != self.graph || v.index >= self.grads.len() {
            return Err(Error::ForeignTensor);
        }
        self.grads[v.index].as_ref().ok_or(Error::NotAParameter(v.index))
    }
}

fn last_dim(t: &Tensor) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

fn mul_same(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(other.shape().to_vec(), data).unwrap()
}

fn expand_axis(g: &Tensor, shape: &[usize], axis: usize, factor: f64) -> Tensor {
    let s = axis_split(shape, axis).unwrap();
    let mut out = vec![0.0; shape.iter().product()];
    for o in 0..s.outer {
        for k in 0..s.len {
            let base = (o * s.len + k) * s.inner;
            for i in 0..s.inner {
                out[base + i] = g.data()[o * s.inner + i] * factor;
            }
        }
    }
    Tensor::new(shape.to_vec(), out).unwrap()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(t: &Tensor, log: bool) -> Result<Tensor> {
    if t.rank() == 0 {
        return Err(invalid("softmax of a scalar"));
    }
    let cols = last_dim(t);
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        if log {
            let lse = max + total.ln();
            row.iter_mut().for_each(|x| *x -= lse);
        } else {
            row.iter_mut().for_each(|x| *x = (*x - max).exp() / total);
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}
