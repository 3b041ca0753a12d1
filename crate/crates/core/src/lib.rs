//! Cross-modality image-to-point-cloud registration.
//!
//! The engine renders a point cloud into a depth map, densifies it, turns
//! per-layer feature tensors from both modalities into fused keypoint
//! descriptors, matches them with a mutual nearest-neighbour check and
//! recovers the camera pose with Kabsch or PnP inside RANSAC. Neural feature
//! extraction happens elsewhere; its output arrives through the FRGF file
//! format in [`io`].

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod depth;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod par;
pub mod pipeline;
pub mod solvers;
pub mod synth;

pub use error::{Error, Result};
