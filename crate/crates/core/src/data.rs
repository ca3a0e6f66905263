//! Datasets: synthetic Gaussian blobs, CSV ingestion, splitting, mini-batches.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{invalid, Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Inputs and labels of a mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `len x d`
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.rank() != 2 || inputs.shape()[0] != labels.len() {
            return Err(invalid(format!(
                "batch inputs {:?} do not match {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self> {
        if labels.is_empty() {
            return Err(invalid("dataset must contain at least one example"));
        }
        if inputs.rank() != 2 || inputs.shape()[0] != labels.len() {
            return Err(invalid(format!(
                "inputs {:?} do not match {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        if inputs.data().iter().any(|v| !v.is_finite()) {
            return Err(invalid("inputs contain non-finite values"));
        }
        Ok(Self {
            inputs,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch {
            inputs: Tensor::new(vec![indices.len(), d], data).expect("consistent shape"),
            labels,
        }
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            labels: self.labels.clone(),
        }
    }

    fn subset(&self, indices: &[usize], split: Split) -> Self {
        let b = self.select(indices);
        Self {
            inputs: b.inputs,
            labels: b.labels,
            class_count: self.class_count,
            split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Minimum distance between any two cluster centres (clusters have unit variance).
    pub separation: f64,
    /// Fraction of labels resampled uniformly over all classes.
    pub label_noise: f64,
}

impl BlobSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim < 1 || self.per_class < 1 {
            return Err(invalid("blobs need at least 2 classes, 1 dimension and 1 point per class"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(invalid(format!("label noise {} outside [0, 0.5)", self.label_noise)));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(invalid("separation must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Cluster centres with pairwise distances of at least `separation`.
///
/// With `dim >= classes` the centres are the vertices of a regular simplex
/// (scaled basis vectors) under a seeded random rotation. Otherwise they sit
/// evenly spaced on a circle of seeded phase in the first two coordinates, or
/// on a line when `dim == 1`.
pub fn blob_centers(classes: usize, dim: usize, separation: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, &[tag::DATA, 0]);
    if dim >= classes {
        let rotation = random_orthogonal(dim, &mut rng);
        let scale = separation / 2f64.sqrt();
        (0..classes)
            .map(|k| (0..dim).map(|j| scale * rotation[j][k]).collect())
            .collect()
    } else if dim >= 2 {
        let radius = separation / (2.0 * (PI / classes as f64).sin());
        let phase: f64 = rng.random::<f64>() * 2.0 * PI;
        (0..classes)
            .map(|k| {
                let angle = phase + 2.0 * PI * k as f64 / classes as f64;
                let mut c = vec![0.0; dim];
                c[0] = radius * angle.cos();
                c[1] = radius * angle.sin();
                c
            })
            .collect()
    } else {
        let mid = (classes as f64 - 1.0) / 2.0;
        (0..classes).map(|k| vec![(k as f64 - mid) * separation]).collect()
    }
}

fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    // rotation[j][k] = j-th coordinate of k-th basis vector
    (0..dim).map(|j| (0..dim).map(|k| cols[k][j]).collect()).collect()
}

/// Unit-variance Gaussian clusters around [`blob_centers`], rows in class-major
/// order, with label noise applied.
pub fn synth_gaussian_blobs(spec: &BlobSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let centers = blob_centers(spec.classes, spec.dim, spec.separation, seed);
    let mut rng = rng::stream(seed, &[tag::DATA, 1]);
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            for &c in center {
                data.push(c + rng.sample::<f64, _>(StandardNormal));
            }
            let noisy = rng.random::<f64>() < spec.label_noise;
            labels.push(if noisy { rng.random_range(0..spec.classes) } else { k });
        }
    }
    Dataset::new(Tensor::matrix(n, spec.dim, data)?, labels, spec.classes, Split::Train)
}

/// Reads a comma-delimited file with one header row. `label_column` names the
/// integer label column; every other column is a numeric feature.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, class_count: usize) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("no column named {label_column:?}"),
        })?;
    let d = headers.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(csv_error)?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if j == label_idx {
                let label: usize = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("label {field:?} is not a non-negative integer"),
                })?;
                if label >= class_count {
                    return Err(Error::Parse {
                        line,
                        message: format!("label {label} out of range for {class_count} classes"),
                    });
                }
                labels.push(label);
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("feature {field:?} is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("feature {field:?} is not finite"),
                    });
                }
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "file contains no data rows".into(),
        });
    }
    let n = labels.len();
    Dataset::new(Tensor::matrix(n, d, data)?, labels, class_count, Split::Train)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Seeded permutation, then the first `n - round(n * test_fraction)` rows train
/// and the rest test.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n = ds.len();
    if n < 2 {
        return Err(invalid("cannot split fewer than two examples"));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    let (train_idx, test_idx) = order.split_at(n - n_test);
    Ok((ds.subset(train_idx, Split::Train), ds.subset(test_idx, Split::Test)))
}

/// One epoch of mini-batch index slices over `0..ds.len()`, shuffled by
/// `epoch_seed`. The last slice may be short.
pub fn batches(ds: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    batch_indices(ds.len(), batch_size, epoch_seed)
}

pub fn batch_indices(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(epoch_seed, &[tag::EPOCH]));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Per-column affine standardization fitted on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero spread keep a unit scale.
    pub fn fit(ds: &Dataset) -> Self {
        let (n, d) = (ds.len() as f64, ds.dim());
        let mut mean = vec![0.0; d];
        for i in 0..ds.len() {
            for (m, x) in mean.iter_mut().zip(ds.row(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..ds.len() {
            for ((v, x), m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let d = ds.dim();
        let mut data = ds.inputs.data().to_vec();
        for row in data.chunks_mut(d) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Dataset {
            inputs: Tensor::new(ds.inputs.shape().to_vec(), data).expect("same shape"),
            labels: ds.labels.clone(),
            class_count: ds.class_count,
            split: ds.split,
        }
    }
}
