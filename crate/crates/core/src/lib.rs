//! Explicit semantic density fields supervised by 2D semantic and depth
//! labels through differentiable volume rendering.
//!
//! The pipeline: [`synthworld`] generates ground-truth scenes and labels,
//! [`raypool`] turns labels into weighted rays, [`renderer`] and [`losses`]
//! evaluate a [`sdf::SemanticDensityField`], [`gradients`] differentiates the
//! loss, and [`trainer`] optimizes the field. [`evalio`] scores occupancy and
//! reads and writes every file format.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the recurrences over samples
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod evalio;
pub mod geometry;
pub mod gradients;
pub mod losses;
pub mod parallel;
pub mod raypool;
pub mod renderer;
pub mod rng;
pub mod sdf;
pub mod synthworld;
pub mod trainer;

pub use error::{Error, FormatError, Result};
