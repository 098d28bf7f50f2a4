//! Implicit surface reconstruction from multi-view satellite imagery with
//! RPC cameras, fused monocular depth and normal-consistency supervision.

// `!(x > 0.0)` is the validation idiom here: it rejects NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod field;
pub mod losses;
pub mod pipeline;
pub mod priors;
pub mod raster;
pub mod render;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
