//! Skin-lesion classification pipeline.
//!
//! The crate covers the whole path from an ISIC-style ground-truth manifest to
//! an evaluation report:
//!
//! * [`dataset`]: manifest ingestion, per-task binary labels, stratified split.
//! * [`augment`]: aspect-preserving resize, seeded affine augmentation, class
//!   rebalancing expansion and random/center cropping.
//! * [`nn`]: a small CPU convolutional network engine with the backbone
//!   registry, softmax inference, momentum SGD and checkpoints.
//! * [`train`]: staged learning-rate schedules and the epoch loop.
//! * [`ensemble`]: prediction sets and softmax-mean fusion.
//! * [`metrics`]: confusion counts, rates, ROC curve and AUC (with a
//!   pair-counting oracle).
//! * [`experiment`]: flat key-value configuration, shipped presets, the
//!   synthetic dataset generator and the end-to-end recipes.

pub mod augment;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
