//! Calibration measurement and regularization.
//!
//! Hard scores (decision, confidence, correctness) feed the binned expected
//! calibration error and reliability tables. The kernel-based WMMCE is the
//! trainable surrogate; it can be driven either by hard scores with the
//! decision held fixed ([`AeceMode::Original`]) or by smoothed, fully
//! differentiable scores ([`AeceMode::FullyDifferentiable`]).

mod aece;
mod ece;
mod scores;
mod wmmce;

pub use aece::{aece, aece_var, AeceMode};
pub use ece::{
    bin_index, compute_ece, ece_from_table, parse_reliability_table, reliability_diagram, write_reliability_table,
    BinStats, CalibrationReport, ReliabilityRow, DEFAULT_BINS,
};
pub use scores::{
    argmax, score_predictions, smoothed_confidence, smoothed_confidence_var, smoothed_correctness,
    smoothed_correctness_var, PredictionRecord, TemperatureSpec,
};
pub use wmmce::{laplacian_kernel, wmmce, wmmce_var, KernelSpec};
