//! Multi-plane vision transformer (MP-ViT) for binary classification of
//! multi-channel volumes acquired in two orientations.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense tensors and reverse-mode differentiation
//! * [`model`]: configuration, parameters, the network forward pass, checkpoints
//! * [`data`]: volume files, resampling, normalization, the synthetic generator, sampling
//! * [`train`]: loss, AdamW, and the training loop
//! * [`metrics`]: ROC/AUC, sensitivity/specificity, McNemar's test, reports

pub mod container;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
