//! Subpixel-precise tracking of rigid objects with an edge-based shape model.
//!
//! A model of edge points and normals is built from the first frame, then
//! located in each new frame by a cutoff-accelerated search over
//! translation, rotation and scale, refined to subpixel precision and
//! adapted to the object's current appearance.

pub mod bench;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod localization;
pub mod model;
pub mod refinement;
pub mod tracker;
pub mod update;

pub use error::{Error, Result};

/// Gradient norms below this are treated as "no direction" and score zero.
pub const ZERO_GRADIENT: f64 = 1e-9;
