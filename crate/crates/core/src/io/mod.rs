//! File formats: float rasters, PNG images, trajectory text files.

mod raster;
mod trajectory;

pub use raster::{Raster, RASTER_MAGIC};
pub use trajectory::{Trajectory, TrajectorySample};
