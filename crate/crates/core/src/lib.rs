//! Transient stability assessment toolkit.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`grid`] and [`tds`] simulate fault scenarios on a power network,
//!    [`labeling`] turns the traces into angle/voltage stability classes and
//!    critical-clearing-time margins, and [`dataset`] packages features and
//!    labels into a binary dataset.
//! 2. [`nn`] holds a small reverse-mode autodiff engine and the GraphSAGE
//!    encoder with a gated mixture-of-experts head; [`train`] fits it and
//!    computes the evaluation metrics.
//! 3. [`monitor`] replays streaming voltage snapshots through a trained model.

pub mod dataset;
pub mod error;
pub mod grid;
pub mod labeling;
pub mod monitor;
pub mod nn;
pub mod tds;
pub mod train;

pub use error::{Error, Result};
