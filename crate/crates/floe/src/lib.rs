//! Density-based anomaly detection on feature vectors.
//!
//! The crate trains a Real-NVP normalizing flow to model the distribution of
//! normal samples and scores new samples by their negative log-likelihood.
//! When a few anomalous samples are available, an auxiliary margin ranking
//! loss ("outlier exposure") pushes their likelihood down during training.
//! Reconstruction (autoencoder) and binary-classifier baselines, ROC/AUC
//! evaluation with per-type breakdowns, synthetic benchmark generation, and
//! a seeded sweep harness round out the toolkit.
//!
//! Everything is deterministic given a seed: training runs, dataset
//! generation, and serialized artifacts reproduce byte-for-byte.

pub mod classifier;
pub mod container;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod exposure;
pub mod rng;
pub mod sweep;
pub mod synth;

pub mod flow;
pub mod linalg;
pub mod nn;
pub mod reduce;

pub use error::{Error, Result};
