use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::scores::PredictionRecord;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_BINS: usize = 15;

const TABLE_HEADER: &str = "bin_index,left_edge,right_edge,count,accuracy,confidence";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub count: usize,
    /// `None` for an empty bin.
    pub accuracy: Option<f64>,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<BinStats>,
    pub ece: f64,
    pub total: usize,
    pub accuracy: f64,
    pub mean_confidence: f64,
}

impl CalibrationReport {
    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }
}

/// Zero-based bin of confidence `r` among `m` bins `((k-1)/m, k/m]`, with
/// the first bin closed at 0.
pub fn bin_index(r: f64, m: usize) -> usize {
    let mf = m as f64;
    let mut k = ((r * mf).ceil() as i64).clamp(1, m as i64) as usize;
    while k > 1 && r <= (k - 1) as f64 / mf {
        k -= 1;
    }
    while k < m && r > k as f64 / mf {
        k += 1;
    }
    k - 1
}

fn weighted_gap(bins: &[BinStats], total: usize) -> f64 {
    let n = total as f64;
    let mut ece = 0.0;
    for b in bins {
        if let (Some(acc), Some(conf)) = (b.accuracy, b.confidence) {
            ece += b.count as f64 / n * (acc - conf).abs();
        }
    }
    ece
}

/// Binned expected calibration error over `bins` equal-width confidence bins.
pub fn compute_ece(records: &[PredictionRecord], bins: usize) -> Result<CalibrationReport> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if bins == 0 {
        return Err(invalid("bin count must be at least 1"));
    }
    let mut counts = vec![0usize; bins];
    let mut conf_sums = vec![0.0; bins];
    let mut acc_sums = vec![0.0; bins];
    for rec in records {
        let b = bin_index(rec.confidence, bins);
        counts[b] += 1;
        conf_sums[b] += rec.confidence;
        acc_sums[b] += rec.correctness();
    }
    let stats: Vec<BinStats> = (0..bins)
        .map(|b| {
            if counts[b] == 0 {
                BinStats {
                    count: 0,
                    accuracy: None,
                    confidence: None,
                }
            } else {
                let c = counts[b] as f64;
                BinStats {
                    count: counts[b],
                    accuracy: Some(acc_sums[b] / c),
                    confidence: Some(conf_sums[b] / c),
                }
            }
        })
        .collect();
    let n = records.len();
    let ece = weighted_gap(&stats, n);
    Ok(CalibrationReport {
        bins: stats,
        ece,
        total: n,
        accuracy: records.iter().map(PredictionRecord::correctness).sum::<f64>() / n as f64,
        mean_confidence: records.iter().map(|r| r.confidence).sum::<f64>() / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityRow {
    /// One-based.
    pub bin_index: usize,
    pub left_edge: f64,
    pub right_edge: f64,
    pub count: usize,
    pub accuracy: Option<f64>,
    pub confidence: Option<f64>,
}

/// One row per bin, empty bins included.
pub fn reliability_diagram(report: &CalibrationReport) -> Vec<ReliabilityRow> {
    let m = report.bins.len() as f64;
    report
        .bins
        .iter()
        .enumerate()
        .map(|(k, b)| ReliabilityRow {
            bin_index: k + 1,
            left_edge: k as f64 / m,
            right_edge: (k + 1) as f64 / m,
            count: b.count,
            accuracy: b.accuracy,
            confidence: b.confidence,
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Comma-delimited table with a header row; absent values are `NA`.
pub fn write_reliability_table(rows: &[ReliabilityRow]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.bin_index,
            r.left_edge,
            r.right_edge,
            r.count,
            fmt_opt(r.accuracy),
            fmt_opt(r.confidence)
        );
    }
    out
}

pub fn parse_reliability_table(text: &str) -> Result<Vec<ReliabilityRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TABLE_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {TABLE_HEADER:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
        let opt = |s: &str| if s == "NA" { Ok(None) } else { num(s).map(Some) };
        rows.push(ReliabilityRow {
            bin_index: fields[0].parse().map_err(|_| err("bad bin index".into()))?,
            left_edge: num(fields[1])?,
            right_edge: num(fields[2])?,
            count: fields[3].parse().map_err(|_| err("bad count".into()))?,
            accuracy: opt(fields[4])?,
            confidence: opt(fields[5])?,
        });
    }
    Ok(rows)
}

/// Re-derives the ECE from reliability rows.
pub fn ece_from_table(rows: &[ReliabilityRow]) -> f64 {
    let stats: Vec<BinStats> = rows
        .iter()
        .map(|r| BinStats {
            count: r.count,
            accuracy: r.accuracy,
            confidence: r.confidence,
        })
        .collect();
    let total = rows.iter().map(|r| r.count).sum();
    weighted_gap(&stats, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(confidence: f64, correct: bool) -> PredictionRecord {
        PredictionRecord {
            probs: vec![confidence, 1.0 - confidence],
            decision: 0,
            confidence,
            correct,
            label: if correct { 0 } else { 1 },
        }
    }

    #[test]
    fn perfectly_confident_and_correct() {
        let recs: Vec<_> = (0..20).map(|_| rec(1.0, true)).collect();
        let report = compute_ece(&recs, 10).unwrap();
        assert_eq!(report.ece, 0.0);
        assert_eq!(report.bins[9].count, 20);
    }

    #[test]
    fn two_record_hand_case() {
        let report = compute_ece(&[rec(0.65, true), rec(0.65, false)], 10).unwrap();
        let occupied: Vec<_> = report.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(report.bins[6].count, 2);
        assert!((report.bins[6].confidence.unwrap() - 0.65).abs() < 1e-15);
        assert_eq!(report.bins[6].accuracy, Some(0.5));
        assert!((report.ece - 0.15).abs() < 1e-12);
    }

    #[test]
    fn boundaries_are_left_open() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.1000001, 10), 1);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.3, 10), 2);
        assert_eq!(bin_index(0.7, 1), 0);
        for k in 1..=15 {
            assert_eq!(bin_index(k as f64 / 15.0, 15), k - 1);
        }
    }

    #[test]
    fn single_bin_is_global_gap() {
        let recs = vec![rec(0.9, true), rec(0.6, false), rec(0.8, true), rec(0.55, true)];
        let report = compute_ece(&recs, 1).unwrap();
        let acc: f64 = 0.75;
        let conf = (0.9 + 0.6 + 0.8 + 0.55) / 4.0;
        assert!((report.ece - (acc - conf).abs()).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_ece(&[], 10), Err(Error::EmptyBatch)));
        assert!(compute_ece(&[rec(0.5, true)], 0).is_err());
    }

    #[test]
    fn diagram_rows_and_round_trip() {
        let recs = vec![rec(0.95, true), rec(0.97, false), rec(0.42, true)];
        let report = compute_ece(&recs, 10).unwrap();
        let rows = reliability_diagram(&report);
        assert_eq!(rows.len(), 10);
        assert_eq!(rows[0].accuracy, None);
        assert_eq!(rows[0].count, 0);
        let text = write_reliability_table(&rows);
        assert!(text.starts_with("bin_index,left_edge,right_edge,count,accuracy,confidence\n"));
        assert!(text.contains(",0,NA,NA"));
        let parsed = parse_reliability_table(&text).unwrap();
        assert_eq!(parsed, rows);
        assert!((ece_from_table(&parsed) - report.ece).abs() < 1e-12);
    }

    #[test]
    fn all_mass_in_last_bin() {
        let recs: Vec<_> = (0..5).map(|i| rec(0.95 + 0.01 * i as f64, i % 2 == 0)).collect();
        let rows = reliability_diagram(&compute_ece(&recs, 10).unwrap());
        assert_eq!(rows.len(), 10);
        assert!(rows[..9].iter().all(|r| r.count == 0));
        assert_eq!(rows[9].count, 5);
    }

    #[test]
    fn malformed_tables() {
        assert!(parse_reliability_table("nope\n").is_err());
        let bad = format!("{TABLE_HEADER}\n1,0,0.5,3,x,0.2\n");
        assert!(matches!(parse_reliability_table(&bad), Err(Error::Parse { line: 2, .. })));
    }
}
