use crate::error::{invalid, Error, Result};

/// Dense row-major tensor of `f64`.
///
/// A `Tensor` is a plain value. It takes part in differentiation only once it
/// is registered with a [`Graph`](super::Graph), which hands back a
/// [`Var`](super::Var) handle.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(invalid(format!(
                "shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NonScalarRoot(self.shape.clone()))
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn reshaped(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Maximum along `axis`. Evaluation-only helper; carries no gradient.
    pub fn max_axis(&self, axis: usize) -> Result<Self> {
        reduce_axis(self, axis, f64::NEG_INFINITY, f64::max)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        reduce_axis(self, axis, 0.0, |a, b| a + b)
    }
}

pub(crate) struct AxisSplit {
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
}

pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<AxisSplit> {
    if axis >= shape.len() {
        return Err(invalid(format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(AxisSplit {
        outer: shape[..axis].iter().product(),
        len: shape[axis],
        inner: shape[axis + 1..].iter().product(),
    })
}

fn reduce_axis(t: &Tensor, axis: usize, init: f64, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let s = axis_split(&t.shape, axis)?;
    let mut out = vec![init; s.outer * s.inner];
    for o in 0..s.outer {
        for k in 0..s.len {
            let base = (o * s.len + k) * s.inner;
            for i in 0..s.inner {
                let slot = &mut out[o * s.inner + i];
                *slot = f(*slot, t.data[base + i]);
            }
        }
    }
    let mut shape = t.shape.clone();
    shape.remove(axis);
    Tensor::new(shape, out)
}

/// Numpy-style broadcast of two shapes, aligned at the trailing axis.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for k in 0..rank {
        let da = if k < rank - a.len() { 1 } else { a[k - (rank - a.len())] };
        let db = if k < rank - b.len() { 1 } else { b[k - (rank - b.len())] };
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out`, with zero stride on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for k in (0..shape.len()).rev() {
        strides[k + offset] = if shape[k] == 1 { 0 } else { acc };
        acc *= shape[k];
    }
    strides
}

/// Applies `f` elementwise over the broadcast of `a` and `b`.
pub(crate) fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor {
            shape: a.shape.clone(),
            data,
        });
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| Error::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })?;
    if b.data.len() == 1 && out_shape == a.shape {
        let y = b.data[0];
        return Ok(a.map(|x| f(x, y)));
    }
    if a.data.len() == 1 && out_shape == b.shape {
        let x = a.data[0];
        return Ok(b.map(|y| f(x, y)));
    }
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let n: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(f(a.data[ia], b.data[ib]));
        // odometer increment
        for k in (0..rank).rev() {
            idx[k] += 1;
            ia += sa[k];
            ib += sb[k];
            if idx[k] < out_shape[k] {
                break;
            }
            ia -= sa[k] * idx[k];
            ib -= sb[k] * idx[k];
            idx[k] = 0;
        }
    }
    Ok(Tensor {
        shape: out_shape,
        data,
    })
}

/// Sums `grad` (shaped like a broadcast output) back down to `shape`.
pub(crate) fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape == shape {
        return grad.clone();
    }
    let out_shape = &grad.shape;
    let strides = broadcast_strides(shape, out_shape);
    let mut data = vec![0.0; shape.iter().product()];
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut target = 0usize;
    for &g in &grad.data {
        data[target] += g;
        for k in (0..rank).rev() {
            idx[k] += 1;
            target += strides[k];
            if idx[k] < out_shape[k] {
                break;
            }
            target -= strides[k] * idx[k];
            idx[k] = 0;
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    };
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(mismatch());
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a.data[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor {
        shape: vec![n, m],
        data: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().len(), 6);
        assert_eq!(Tensor::scalar(3.0).item().unwrap(), 3.0);
    }

    #[test]
    fn broadcasting_row_against_column() {
        let col = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let row = Tensor::new(vec![1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let out = zip_broadcast("add", &col, &row, |a, b| a + b).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(out.data(), &[11.0, 21.0, 31.0, 12.0, 22.0, 32.0]);
        let back = reduce_to_shape(&out, &[1, 3]);
        assert_eq!(back.data(), &[23.0, 43.0, 63.0]);
        let back = reduce_to_shape(&out, &[2, 1]);
        assert_eq!(back.data(), &[63.0, 66.0]);
    }

    #[test]
    fn broadcasting_rejects_incompatible() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2]);
        let err = zip_broadcast("mul", &a, &b, |x, y| x * y).unwrap_err();
        assert!(err.to_string().contains("mul"));
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn max_and_sum_axis() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 5.0, 2.0, 7.0, 0.0, 3.0]).unwrap();
        assert_eq!(t.max_axis(1).unwrap().data(), &[5.0, 7.0]);
        assert_eq!(t.max_axis(0).unwrap().data(), &[7.0, 5.0, 3.0]);
        assert_eq!(t.sum_axis(0).unwrap().data(), &[8.0, 5.0, 5.0]);
    }
}
