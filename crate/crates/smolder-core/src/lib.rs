//! Framework-independent pieces of the obscured-fire detection pipeline:
//! IR-derived weak labels, clip datasets with fused ground truth, synthetic
//! desk-scale scenes, segmentation metrics, and run configuration.

pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod ir;
pub mod mask;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
