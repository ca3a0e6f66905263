use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use calibra::calibration::{ece_from_table, parse_reliability_table};
use calibra::training::TrainLog;
use calibra_cli::commands::*;
use calibra_cli::{CliError, ExperimentConfig};
use tempfile::TempDir;

fn calibra(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calibra")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const BLOBS: &str = r#"
[dataset]
source = "blobs"
classes = 3
per_class = 30
dim = 2
separation = 3.0
label_noise = 0.1

[model]
hidden_dims = [8]
"#;

fn config(objective: &str, extra: &str) -> String {
    format!(
        "{BLOBS}\n[train]\nobjective = \"{objective}\"\nepochs = 4\nbatch_size = 16\neval_samples = 6\nbeta = 0.01\n{extra}\n[train.prior]\nstd = 1.0\n"
    )
}

fn sorted_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn frequentist_train_writes_four_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "fnn.toml", &config("fnn", ""));
    let out = tmp.path().join("run");
    let res = calibra(&["train", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(sorted_names(&out), [CONFIG_FILE, RELIABILITY_FILE, REPORT_FILE, LOG_FILE]);
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("accuracy") && stdout.contains("ece"));
    let log = TrainLog::from_csv(&fs::read_to_string(out.join(LOG_FILE)).unwrap()).unwrap();
    assert_eq!(log.len(), 4);
}

#[test]
fn missing_csv_fails_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let body = "[dataset]\nsource = \"csv\"\npath = \"/definitely/missing.csv\"\nlabel_column = \"y\"\nclasses = 2\n";
    let cfg = write_config(tmp.path(), "csv.toml", body);
    let out = tmp.path().join("run");
    let res = calibra(&["train", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("does not exist"));
    assert!(!out.exists());
}

#[test]
fn csv_dataset_trains() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::from("x1,label,x2\n");
    for i in 0..60 {
        let c = i % 2;
        let x = i as f64 / 60.0 + 3.0 * c as f64;
        text.push_str(&format!("{x},{c},{}\n", -x));
    }
    let data = write_config(tmp.path(), "data.csv", &text);
    let body = format!(
        "[dataset]\nsource = \"csv\"\npath = {:?}\nlabel_column = \"label\"\nclasses = 2\n[train]\nobjective = \"ca-fnn\"\nepochs = 30\nbatch_size = 8\n[train.optimizer]\nkind = \"adam\"\nlr = 0.02\n",
        path_str(&data)
    );
    let cfg = write_config(tmp.path(), "csv.toml", &body);
    let summary = cmd_train(&cfg, Some(&tmp.path().join("run")), None).unwrap();
    assert!(summary.accuracy > 0.9, "{}", summary.accuracy);
}

#[test]
fn repeated_training_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "cabnn.toml", &config("ca-bnn", "samples = 2"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cmd_train(&cfg, Some(&a), None).unwrap();
    cmd_train(&cfg, Some(&b), None).unwrap();
    for f in [LOG_FILE, RELIABILITY_FILE, CHECKPOINT_FILE, REPORT_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn echoed_config_reparses_identically() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &config("bnn", "lambda = 3.5"));
    let out = tmp.path().join("run");
    cmd_train(&cfg, Some(&out), Some(12)).unwrap();
    let echoed = ExperimentConfig::load(&out.join(CONFIG_FILE)).unwrap();
    let mut expected = ExperimentConfig::load(&cfg).unwrap();
    expected.resolve(Some(12));
    expected.out_dir = out.clone();
    assert_eq!(echoed, expected);
    // and training from the echo reproduces the run
    let again = tmp.path().join("again");
    cmd_train(&out.join(CONFIG_FILE), Some(&again), None).unwrap();
    assert_eq!(fs::read(out.join(LOG_FILE)).unwrap(), fs::read(again.join(LOG_FILE)).unwrap());
}

fn sweep_rows(dir: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(dir.join(SWEEP_FILE)).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn sweep_grid_has_one_row_per_cell() {
    let tmp = TempDir::new().unwrap();
    let body = format!("lambdas = [0.0, 1.0, 5.0]\nseeds = [3, 4]\n{}", config("ca-fnn", ""));
    let cfg = write_config(tmp.path(), "s.toml", &body);
    let out = tmp.path().join("sweep");
    let res = calibra(&["sweep", "--config", path_str(&cfg), "--out", path_str(&out), "--threads", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = sweep_rows(&out);
    assert_eq!(rows.len(), 6);
    let cells: Vec<(&str, &str)> = rows.iter().map(|r| (r[1].as_str(), r[2].as_str())).collect();
    assert_eq!(cells, [("0", "3"), ("0", "4"), ("1", "3"), ("1", "4"), ("5", "3"), ("5", "4")]);
    assert!(rows.iter().all(|r| r[0] == "ca-fnn" && r[5] == "ok"));
}

#[test]
fn zero_lambda_sweep_matches_train_and_collapses_to_bnn() {
    let tmp = TempDir::new().unwrap();
    let ca = write_config(tmp.path(), "ca.toml", &format!("lambdas = [0.0]\nseeds = [1, 2]\n{}", config("ca-bnn", "")));
    let bnn = write_config(tmp.path(), "bnn.toml", &format!("lambdas = [0.0]\nseeds = [1, 2]\n{}", config("bnn", "")));
    let ca_rows = cmd_sweep(&ca, Some(&tmp.path().join("ca")), None, Some(1)).unwrap();
    let bnn_rows = cmd_sweep(&bnn, Some(&tmp.path().join("bnn")), None, Some(1)).unwrap();
    for (a, b) in ca_rows.iter().zip(&bnn_rows) {
        assert_eq!((a.lambda, a.seed, &a.outcome), (b.lambda, b.seed, &b.outcome));
    }
    let single = write_config(tmp.path(), "single.toml", &config("ca-bnn", "lambda = 0.0"));
    let s = cmd_train(&single, Some(&tmp.path().join("t")), Some(2)).unwrap();
    assert_eq!(ca_rows[1].outcome, Ok((s.accuracy, s.ece)));
}

#[test]
fn failed_cells_are_recorded_and_fail_the_command() {
    let tmp = TempDir::new().unwrap();
    // 60 examples -> 42 train; batches of 41 leave one example, which only
    // the calibration term rejects
    let body = format!(
        "lambdas = [0.0, 2.0]\n{}",
        BLOBS.replace("per_class = 30", "per_class = 20")
            + "[train]\nobjective = \"ca-fnn\"\nepochs = 1\nbatch_size = 41\n"
    );
    let cfg = write_config(tmp.path(), "f.toml", &body);
    let out = tmp.path().join("sweep");
    let res = calibra(&["sweep", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert!(!res.status.success());
    let rows = sweep_rows(&out);
    assert_eq!(rows[0][5], "ok");
    assert!(rows[1][5].starts_with("failed"), "{:?}", rows[1]);
    assert_eq!(rows[1][3], "NA");
    let err = cmd_sweep(&cfg, Some(&out), None, None).unwrap_err();
    assert!(matches!(err, CliError::SweepFailed { failed: 1, total: 2 }));
}

fn trained_bayesian(tmp: &TempDir) -> (PathBuf, PathBuf) {
    let cfg = write_config(tmp.path(), "b.toml", &config("ca-bnn", "lambda = 2.0"));
    let out = tmp.path().join("run");
    cmd_train(&cfg, Some(&out), Some(5)).unwrap();
    (cfg, out)
}

#[test]
fn evaluate_reproduces_the_final_log_entry() {
    let tmp = TempDir::new().unwrap();
    let (cfg, out) = trained_bayesian(&tmp);
    let log = TrainLog::from_csv(&fs::read_to_string(out.join(LOG_FILE)).unwrap()).unwrap();
    let eval = cmd_evaluate(&EvaluateOptions {
        config: cfg.clone(),
        checkpoint: out.join(CHECKPOINT_FILE),
        out: Some(tmp.path().join("eval")),
        ..Default::default()
    })
    .unwrap();
    let last = log.last().unwrap();
    assert!((eval.report.ece - last.test_ece).abs() < 1e-12);
    assert_eq!(eval.report.accuracy, last.test_acc);
    assert_eq!(
        fs::read(out.join(RELIABILITY_FILE)).unwrap(),
        fs::read(tmp.path().join("eval").join(RELIABILITY_FILE)).unwrap()
    );
}

#[test]
fn single_bin_evaluation_is_the_global_gap() {
    let tmp = TempDir::new().unwrap();
    let (cfg, out) = trained_bayesian(&tmp);
    let eval_dir = tmp.path().join("m1");
    let res = calibra(&[
        "evaluate",
        "--config",
        path_str(&cfg),
        "--checkpoint",
        path_str(&out.join(CHECKPOINT_FILE)),
        "--bins",
        "1",
        "--out",
        path_str(&eval_dir),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = parse_reliability_table(&fs::read_to_string(eval_dir.join(RELIABILITY_FILE)).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    let gap = (rows[0].accuracy.unwrap() - rows[0].confidence.unwrap()).abs();
    assert!((ece_from_table(&rows) - gap).abs() < 1e-12);
}

#[test]
fn corrupt_or_mismatched_checkpoints_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let (cfg, out) = trained_bayesian(&tmp);
    let ck = out.join(CHECKPOINT_FILE);
    let mut bytes = fs::read(&ck).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, &bytes).unwrap();
    let res = calibra(&["evaluate", "--config", path_str(&cfg), "--checkpoint", path_str(&bad)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("checksum"));

    let wider = write_config(
        tmp.path(),
        "wider.toml",
        &config("ca-bnn", "").replace("hidden_dims = [8]", "hidden_dims = [9]"),
    );
    let res = calibra(&["evaluate", "--config", path_str(&wider), "--checkpoint", path_str(&ck)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("does not match"));
}
