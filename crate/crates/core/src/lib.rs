//! Efficient perceptual super-resolution toolkit: a zoo of ×4 generators
//! with exact parameter/FLOPs accounting, EDBB re-parameterization, a
//! Real-ESRGAN-style degradation pipeline, the perceptual challenge score,
//! and multi-stage perceptual training.

pub mod archzoo;
pub mod checkpoint;
pub mod cli;
pub mod degrade;
pub mod efficiency;
pub mod error;
pub mod image;
pub mod nn;
pub mod reparam;
pub mod score;
pub mod train;

pub use error::{Error, Result};
