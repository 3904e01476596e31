//! Obscured-fire segmentation from RGB video: a pre-trained-style 2D
//! encoder feeds a 3D decoder that reads temporal smoke patterns, trained
//! with Dice loss on IR-derived clip labels.

pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod model;
pub mod train;

pub use error::{Error, Result};

/// Default CPU backend for inference.
pub type Cpu = burn::backend::NdArray<f32>;
/// Autodiff wrapper used for training.
pub type CpuAutodiff = burn::backend::Autodiff<Cpu>;
