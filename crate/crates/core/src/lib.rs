//! Dual-stream feature fusion network for salient and camouflaged object detection.

pub mod blocks;
pub mod checks;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod tensor;
pub mod verify;

pub use error::{DsuError, Result};
pub use tensor::{ConvSpec, Scalar, Tensor};
