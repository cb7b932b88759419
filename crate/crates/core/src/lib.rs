//! Self-organized operational (Taylor-polynomial) convolutions, a
//! multi-resolution landmark network built from them, and the surrounding
//! machinery for two-stage cephalometric landmark detection: Gaussian heatmap
//! targets, patch refinement, training, evaluation metrics and the clinical
//! measurements derived from landmark positions.
//!
//! Module map:
//!
//! - [`tensor`]: dense tensors, the differentiation tape, Adam.
//! - [`selfonn`]: the Q-th order operational convolution layer.
//! - [`blocks`]: stem, bottleneck sub-blocks, residual units, branch fusion.
//! - [`backbone`]: the assembled network and parameter counting.
//! - [`heatmap`]: landmark sets, target encoding, sub-pixel decoding.
//! - [`pipeline`]: augmentation, patches, learning-rate schedule, training and
//!   two-stage inference.
//! - [`metrics`]: radial error, SDR, NME, per-image error.
//! - [`clinical`]: angle/ratio measurements, classes, confusion matrices.
//! - [`raster`]: grayscale images, crops and resizing.
//! - [`io`]: datasets on disk, synthetic data, checkpoints, run configs, CSV
//!   reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod blocks;
pub mod clinical;
pub mod error;
pub mod heatmap;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod selfonn;
pub mod tensor;

pub use error::{Error, Result};

/// Number of cephalometric landmarks per image.
pub const NUM_LANDMARKS: usize = 19;
