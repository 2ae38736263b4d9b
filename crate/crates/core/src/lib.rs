//! Jigsaw-puzzle self-supervised representation learning for knee MR video
//! clips, with transfer to a binary ACL-tear classifier.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`permset`]: Hamming-separated arrangement pools and pretext class sets.
//! - [`patchgen`]: frame tiling, geometric augmentation and jumbled samples.
//! - [`nn`]: a small CPU tensor engine (convolutions, pooling, optimizers).
//! - [`models`]: the nine-branch pretext network and the downstream classifier.
//! - [`training`]: pretext and downstream loops, frame division, oversampling.
//! - [`data`]: clip store, MRNet ingestion and a synthetic dataset generator.
//! - [`explain`]: Grad-CAM heatmaps and overlays.
//! - [`eval`]: accuracy, AUC and percentile-bootstrap intervals.
//!
//! Data-parallel loops go through [`par`], which falls back to sequential
//! execution when the `parallel` feature is disabled.

pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod imaging;
pub mod models;
pub mod nn;
pub mod par;
pub mod patchgen;
pub mod permset;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
