//! Unsupervised registration of bidirectionally scanned raster images by
//! separating a shared scene representation from per-direction appearance.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`] and [`autograd`]: a small CPU tensor type and reverse-mode tape.
//! - [`scan_sim`]: synthetic bidirectional acquisitions with ground truth.
//! - [`dataset`]: interleaving, augmentation, splits, on-disk layouts.
//! - [`model`]: the scene encoder, appearance encoder and generator.
//! - [`losses`] and [`metrics`]: objectives with analytic gradients and
//!   evaluation measures sharing the same kernels.
//! - [`trainer`]: optimisation, checkpoints, ablations, benchmarking.

pub mod autograd;
pub mod dataset;
pub mod fsutil;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod scan_sim;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use image::Image;
