//! Sparse 2D-to-3D human pose uplifting with temporal upsampling.

pub mod bench;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod network;
pub mod sequencing;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
