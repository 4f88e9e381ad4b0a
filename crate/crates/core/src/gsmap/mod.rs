//! Gaussian-splat map: anchored ellipsoid primitives, keyframe-driven
//! seeding and densification, rigid transport under pose updates, and a
//! byte-stable PLY export.

pub mod map;
pub mod ply;

pub use map::{Gaussian, GaussianMap, InitParams};
pub use ply::{load_ply, read_ply, save_ply, write_ply};
