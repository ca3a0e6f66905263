use std::path::{Path, PathBuf};

use calibra::calibration::{reliability_diagram, write_reliability_table, CalibrationReport};
use calibra::data::Dataset;
use calibra::models::MlpSpec;
use calibra::training::{evaluate, initial_state, train, Evaluation, ModelState, Objective, TrainConfig, TrainLog};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::write_files;

pub const LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.json";
pub const RELIABILITY_FILE: &str = "reliability.csv";
pub const CHECKPOINT_FILE: &str = "posterior.ckpt";
pub const CONFIG_FILE: &str = "config.effective.toml";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Loads, applies the seed override, and validates.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.resolve(seed);
    cfg.validate()?;
    Ok(cfg)
}

pub struct RunOutput {
    pub spec: MlpSpec,
    pub train: TrainConfig,
    pub state: ModelState,
    pub log: TrainLog,
    pub eval: Evaluation,
}

/// One complete training run with `train` in place of `cfg.train`; data are
/// drawn and split with `train.seed`.
pub fn run_training(cfg: &ExperimentConfig, train_cfg: &TrainConfig) -> Result<RunOutput> {
    let spec = cfg.model_spec()?;
    let (train_set, test_set) = cfg.datasets(train_cfg.seed)?;
    let (state, log) = train(&spec, initial_state(&spec, train_cfg), &train_set, &test_set, train_cfg)?;
    let eval = evaluate(&state, &spec, &test_set, train_cfg.bins, train_cfg.eval_samples, train_cfg.seed)?;
    Ok(RunOutput { spec, train: train_cfg.clone(), state, log, eval })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportFile {
    pub objective: Objective,
    pub lambda: f64,
    pub seed: u64,
    pub eval_samples: usize,
    pub dataset_rows: usize,
    pub report: CalibrationReport,
}

fn report_json(report: &ReportFile) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn reliability_csv(report: &CalibrationReport) -> Vec<u8> {
    write_reliability_table(&reliability_diagram(report)).into_bytes()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub accuracy: f64,
    pub ece: f64,
}

pub fn cmd_train(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<TrainSummary> {
    let mut cfg = load_config(config, seed)?;
    if let Some(dir) = out {
        cfg.out_dir = dir.to_path_buf();
    }
    let run = run_training(&cfg, &cfg.train)?;
    let report = ReportFile {
        objective: cfg.train.objective,
        lambda: cfg.train.effective_lambda(),
        seed: cfg.train.seed,
        eval_samples: cfg.train.eval_samples,
        dataset_rows: run.eval.records.len(),
        report: run.eval.report.clone(),
    };
    let mut files = vec![
        (LOG_FILE, run.log.to_csv().into_bytes()),
        (REPORT_FILE, report_json(&report)),
        (RELIABILITY_FILE, reliability_csv(&run.eval.report)),
        (CONFIG_FILE, cfg.to_toml()?.into_bytes()),
    ];
    if let ModelState::Posterior(post) = &run.state {
        let ck = Checkpoint {
            spec: run.spec.clone(),
            posterior: post.clone(),
            prior: cfg.train.prior,
            seed: cfg.train.seed,
        };
        files.push((CHECKPOINT_FILE, ck.to_bytes()));
    }
    write_files(&cfg.out_dir, &files)?;
    Ok(TrainSummary {
        out_dir: cfg.out_dir,
        accuracy: run.eval.report.accuracy,
        ece: run.eval.report.ece,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub objective: Objective,
    pub lambda: f64,
    pub seed: u64,
    pub outcome: std::result::Result<(f64, f64), String>,
}

fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Config(e.to_string());
    w.write_record(["objective", "lambda", "seed", "accuracy", "ece", "status"]).map_err(csv_err)?;
    for r in rows {
        let (acc, ece, status) = match &r.outcome {
            Ok((a, e)) => (a.to_string(), e.to_string(), "ok".to_string()),
            Err(msg) => ("NA".into(), "NA".into(), format!("failed: {msg}")),
        };
        w.write_record([r.objective.name().to_string(), r.lambda.to_string(), r.seed.to_string(), acc, ece, status])
            .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

/// Runs the `lambdas x seeds` grid (lambda-major) with `threads` workers.
/// The table is written even when cells fail; the error reports how many did.
pub fn cmd_sweep(config: &Path, out: Option<&Path>, seed: Option<u64>, threads: Option<usize>) -> Result<Vec<SweepRow>> {
    let mut cfg = load_config(config, seed)?;
    if let Some(dir) = out {
        cfg.out_dir = dir.to_path_buf();
    }
    if cfg.lambdas.is_empty() {
        return Err(CliError::Config("sweep needs at least one lambda".into()));
    }
    let cells: Vec<(f64, u64)> = cfg
        .lambdas
        .iter()
        .flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(cfg.threads))
        .build()?;
    let rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(lambda, seed)| {
                let tc = TrainConfig { lambda, seed, ..cfg.train.clone() };
                let outcome = run_training(&cfg, &tc)
                    .map(|r| (r.eval.report.accuracy, r.eval.report.ece))
                    .map_err(|e| e.to_string());
                SweepRow { objective: tc.objective, lambda, seed, outcome }
            })
            .collect()
    });
    write_files(&cfg.out_dir, &[(SWEEP_FILE, sweep_csv(&rows)?), (CONFIG_FILE, cfg.to_toml()?.into_bytes())])?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        return Err(CliError::SweepFailed { failed, total: rows.len() });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalSplit {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    pub out: Option<PathBuf>,
    /// Defaults to `train.bins` of the config.
    pub bins: Option<usize>,
    /// Defaults to `train.eval_samples` of the config.
    pub eval_samples: Option<usize>,
    pub split: EvalSplit,
}

/// Rebuilds the dataset of the checkpoint's seed and re-scores the posterior
/// ensemble on it; writes the report and reliability table when `out` is set.
pub fn cmd_evaluate(opts: &EvaluateOptions) -> Result<Evaluation> {
    let bytes = std::fs::read(&opts.checkpoint).map_err(|e| CliError::io(&opts.checkpoint, e))?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    let cfg = load_config(&opts.config, Some(ck.seed))?;
    let spec = cfg.model_spec()?;
    if spec != ck.spec {
        return Err(CliError::Checkpoint(format!(
            "checkpoint architecture {:?} does not match the configured {:?}",
            ck.spec, spec
        )));
    }
    let (train_set, test_set): (Dataset, Dataset) = cfg.datasets(ck.seed)?;
    let ds = match opts.split {
        EvalSplit::Train => &train_set,
        EvalSplit::Test => &test_set,
    };
    let bins = opts.bins.unwrap_or(cfg.train.bins);
    let eval_samples = opts.eval_samples.unwrap_or(cfg.train.eval_samples);
    let state = ModelState::Posterior(ck.posterior);
    let eval = evaluate(&state, &spec, ds, bins, eval_samples, ck.seed)?;
    if let Some(dir) = &opts.out {
        let report = ReportFile {
            objective: cfg.train.objective,
            lambda: cfg.train.effective_lambda(),
            seed: ck.seed,
            eval_samples,
            dataset_rows: ds.len(),
            report: eval.report.clone(),
        };
        write_files(dir, &[(REPORT_FILE, report_json(&report)), (RELIABILITY_FILE, reliability_csv(&eval.report))])?;
    }
    Ok(eval)
}
