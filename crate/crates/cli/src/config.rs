use std::path::{Path, PathBuf};

use calibra::data::{load_csv, split, synth_gaussian_blobs, BlobSpec, Dataset, Standardizer};
use calibra::models::{Activation, MlpSpec};
use calibra::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Where the examples come from. Synthetic data is regenerated from the run
/// seed, so every seed of a sweep sees a fresh draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSource {
    Blobs(BlobSpec),
    Csv {
        path: PathBuf,
        label_column: String,
        classes: usize,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Blobs(BlobSpec {
            classes: 4,
            per_class: 500,
            dim: 2,
            separation: 2.5,
            label_noise: 0.2,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32, 32],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    /// Fraction of examples held out for evaluation.
    pub test_fraction: f64,
    /// Standardize features with statistics of the training split.
    pub standardize: bool,
    /// Sweep grid values of `lambda`.
    pub lambdas: Vec<f64>,
    /// Sweep grid seeds; empty means `[train.seed]`.
    pub seeds: Vec<u64>,
    /// Sweep worker threads; 0 uses every core.
    pub threads: usize,
    pub dataset: DatasetSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            test_fraction: 0.3,
            standardize: true,
            lambdas: vec![0.0, 1.0, 5.0, 10.0],
            seeds: Vec::new(),
            threads: 0,
            dataset: DatasetSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Applies a seed override and fills the seed list, so that the echoed
    /// config re-parses to the same value.
    pub fn resolve(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.train.seed = s;
            self.seeds = vec![s];
        }
        if self.seeds.is_empty() {
            self.seeds = vec![self.train.seed];
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::Config(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(CliError::Config(format!("sweep lambda {l} must be finite and >= 0")));
        }
        if let DatasetSource::Csv { path, .. } = &self.dataset {
            if !path.is_file() {
                return Err(CliError::Config(format!("dataset file {} does not exist", path.display())));
            }
        }
        self.model_spec()?;
        Ok(())
    }

    pub fn model_spec(&self) -> Result<MlpSpec> {
        let (dim, classes) = match &self.dataset {
            DatasetSource::Blobs(b) => (b.dim, b.classes),
            DatasetSource::Csv { path, label_column, classes } => {
                let header = csv::Reader::from_path(path)
                    .and_then(|mut r| r.headers().cloned())
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                if !header.iter().any(|h| h.trim() == label_column) {
                    return Err(CliError::Config(format!("{} has no column {label_column:?}", path.display())));
                }
                (header.len() - 1, *classes)
            }
        };
        Ok(MlpSpec::new(dim, self.model.hidden_dims.clone(), classes, self.model.activation)?)
    }

    /// Train/test split for `seed`, standardized when configured.
    pub fn datasets(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let full = match &self.dataset {
            DatasetSource::Blobs(b) => synth_gaussian_blobs(b, seed)?,
            DatasetSource::Csv { path, label_column, classes } => load_csv(path, label_column, *classes)?,
        };
        let (train, test) = split(&full, self.test_fraction, seed)?;
        if self.standardize {
            let st = Standardizer::fit(&train);
            Ok((st.apply(&train), st.apply(&test)))
        } else {
            Ok((train, test))
        }
    }
}
