//! All-weather image restoration at desk scale.
//!
//! A single transformer encoder-decoder removes rain drops, rain+fog and snow
//! from images: a hierarchical encoder with intra-patch attention branches,
//! a decoder driven by learnable weather-type queries, and a convolutional
//! projection tail. Everything runs on a small reverse-mode autodiff core in
//! this crate rather than an external ML framework, so gradients can be verified
//! against central finite differences end to end.
//!
//! Entry points:
//! - [`tensor`]: tensors, the recorded graph, `backward`.
//! - [`model`]: network assembly and the `restore` forward pass.
//! - [`degrade`]: synthetic weather degradations and dataset generation.
//! - [`train`]: Adam loop, schedule, checkpoints.
//! - [`cli`]: the `deweather` command-line surface.
//!
//! See the crate `examples/` directory for runnable walkthroughs of each
//! capability.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod decoder;
pub mod degrade;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod imgio;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
