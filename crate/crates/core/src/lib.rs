//! Shape-model-guided random forest segmentation.
//!
//! This crate holds the algorithmic core and is `no_std` (it needs `alloc`).
//! A myocardium-like closed contour is described by a point distribution
//! model; a pixel classifier forest uses signed distances to model-generated
//! contours as split features; the model is then fitted to the forest's
//! probability map with a bound-constrained pattern search, optionally with a
//! temporal penalty for image sequences.
//!
//! File formats, the command line and parallel drivers live in the `myoseg`
//! companion crate.

#![no_std]
#![allow(clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
pub mod features;
pub mod fitting;
pub mod forest;
pub mod geometry;
pub mod imaging;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod shape_model;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{LandmarkSet, Point};
pub use imaging::{BinaryMask, BoundingBox, Image2D};
pub use shape_model::{ShapeModel, ShapeParams};
