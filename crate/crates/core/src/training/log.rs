use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "epoch,train_loss,test_acc,test_ece,kl,aece,seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    /// Mean per-example cross-entropy over the epoch's mini-batches.
    pub train_loss: f64,
    pub test_acc: f64,
    pub test_ece: f64,
    /// KL to the prior after the epoch (Bayesian objectives only).
    pub kl: Option<f64>,
    /// Mean mini-batch AECE over the epoch.
    pub aece: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Comma-delimited with a header row; missing values are `NA`. Floats use
    /// the shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.test_acc,
                r.test_ece,
                opt(r.kl),
                opt(r.aece),
                opt(r.seconds)
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, h)| h.trim()) != Some(LOG_HEADER) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {LOG_HEADER:?}"),
            });
        }
        let mut records = Vec::new();
        for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let err = |message: String| Error::Parse { line: i + 1, message };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(err(format!("expected 7 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
            let maybe = |s: &str| if s == "NA" { Ok(None) } else { num(s).map(Some) };
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| err(format!("bad epoch {:?}", f[0])))?,
                train_loss: num(f[1])?,
                test_acc: num(f[2])?,
                test_ece: num(f[3])?,
                kl: maybe(f[4])?,
                aece: maybe(f[5])?,
                seconds: maybe(f[6])?,
            });
        }
        Ok(Self { records })
    }
}
