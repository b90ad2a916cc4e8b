//! Uncertainty-guided self cross supervision (USCS) for semi-supervised
//! semantic segmentation.
//!
//! A single two-input two-output network hosts two subnetworks that share an
//! encoder and decoder trunk. On unlabeled images each output head is trained
//! against the other head's CutMix-transformed prediction, with per-pixel
//! weights derived from the Shannon entropy of that prediction.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod reference;
pub mod tensor;
pub mod trainer;
pub mod transforms;
pub mod uncertainty;

pub use error::{Error, Result};
pub use tensor::{LabelMap, Scalar, Tensor, IGNORE_LABEL};
