//! LiDAR-camera 3D detection with bidirectional representational interaction
//! and an alternating predictive decoder, forward pass only.
//!
//! Stages, in pipeline order:
//!
//! - [`scene`]: point clouds, camera rigs, ground truth and a seeded synthetic generator;
//! - [`geometry`]: projection, BEV quantization, pillars and depth completion;
//! - [`correspondence`]: pixel-to-cell and cell-to-pixel maps;
//! - [`interaction`]: local attention encoder keeping one map per modality;
//! - [`decoder`]: query seeding, RoI cropping, dynamic interaction and box heads;
//! - [`pipeline`]: configuration, end-to-end runs, oracle checks and dumps.

pub mod backbone;
pub mod boxes;
pub mod camera;
pub mod checkpoint;
pub mod correspondence;
pub mod decoder;
pub mod error;
pub mod feature;
pub mod geometry;
pub mod interaction;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
