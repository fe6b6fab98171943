//! Scale-space traversal network: a hard-attention image classifier that
//! processes an image top-down, from a coarse whole-image view to selected
//! high-resolution regions.

#![allow(clippy::unnecessary_cast)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod parallel;
pub mod profiler;
pub mod runconfig;
pub mod tensor;
pub mod training;
pub mod traversal;

pub use autodiff::{Activation, Padding, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
