//! Multi-camera dense SLAM back-end with a differentiable Gaussian-splat map.
//!
//! The crate is organized as a stack:
//!
//! * [`geometry`]: SE(3)/Sim(3), pinhole cameras, rig calibration.
//! * [`io`]: raster and trajectory file formats.
//! * [`synth`]: ray-traced synthetic scenes standing in for a learned
//!   front-end (depth priors, correspondences, covisibility).
//! * [`mcba`]: multi-camera bundle adjustment over poses and inverse depths.
//! * [`jdsa`]: joint depth-scale alignment of noisy depth priors.
//! * [`gsmap`]: the Gaussian map and its maintenance ops.
//! * [`rasterizer`]: differentiable splat rendering and map optimization.
//! * [`pipeline`]: online tracking and offline refinement drivers.
//! * [`evalkit`]: trajectory and image-quality metrics.

pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod gsmap;
pub mod io;
pub mod jdsa;
pub mod mcba;
pub mod pipeline;
pub mod rasterizer;
pub mod synth;

pub use error::{Error, Result};
