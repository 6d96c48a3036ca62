//! Online RGB-D inpainting of dynamic objects: data, geometry, networks,
//! losses, training, evaluation and a streaming inference pipeline.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod losses;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
