//! Hierarchical feature learning on point sets.
//!
//! Point clouds are sampled with farthest point sampling, grouped into local
//! regions by ball query or k nearest neighbours, and encoded level by level
//! with shared per-point networks and symmetric max pooling.

pub mod archlang;
pub mod cloud;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod hierarchy;
pub mod neighborhood;
pub mod nn;
pub mod par;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
