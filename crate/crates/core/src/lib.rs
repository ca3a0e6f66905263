//! Calibration-aware training of Bayesian and frequentist neural network
//! classifiers.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: dense tensors with a tape-based reverse-mode engine.
//! - [`models`]: softmax MLP classifiers over a flat parameter vector.
//! - [`variational`]: mean-field Gaussian posteriors, KL to the prior, ensembles.
//! - [`calibration`]: confidence/correctness scores, ECE, reliability tables,
//!   and the kernel calibration regularizer (WMMCE).
//! - [`training`]: the four objectives, the reparametrized gradient estimator,
//!   optimizers, and the training loop.
//! - [`data`]: synthetic blobs, CSV ingestion, splitting, and mini-batching.

pub mod autodiff;
pub mod calibration;
pub mod data;
pub mod error;
pub mod models;
pub mod rng;
pub mod training;
pub mod variational;

pub use error::{Error, Result};
