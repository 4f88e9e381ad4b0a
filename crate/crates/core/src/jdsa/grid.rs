//! Per-keyframe, per-camera bilinear scale grids.
//!
//! An `m x n` grid of positive scale values spans the full image: node
//! `(r, c)` sits at pixel `(c * (w-1)/(n-1), r * (h-1)/(m-1))`, so every
//! in-bounds pixel interpolates between its four surrounding nodes with
//! convex weights and grid nodes are hit exactly.

use crate::error::{Error, Result};
use crate::io::Raster;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    rows: usize,
    cols: usize,
    width: u32,
    height: u32,
    values: Vec<f64>,
}

/// The four grid nodes a pixel interpolates, with their convex weights.
#[derive(Debug, Clone, Copy)]
pub struct GridSupport {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
}

impl ScaleGrid {
    pub fn uniform(rows: usize, cols: usize, width: u32, height: u32, value: f64) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::invalid(format!(
                "scale grid needs at least 2x2 nodes, got {rows}x{cols}"
            )));
        }
        if width < 2 || height < 2 {
            return Err(Error::invalid("scale grid image extent must be at least 2x2"));
        }
        if !(value > 0.0) {
            return Err(Error::invalid(format!("scale value must be positive, got {value}")));
        }
        Ok(ScaleGrid {
            rows,
            cols,
            width,
            height,
            values: vec![value; rows * cols],
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Image extent the grid spans, in pixels.
    pub fn image_extent(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set_node(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Node positions and weights for a pixel, or an error if the pixel lies
    /// outside `[0, w-1] x [0, h-1]`.
    pub fn support(&self, x: f64, y: f64) -> Result<GridSupport> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && x <= max_x && y >= 0.0 && y <= max_y) {
            return Err(Error::invalid(format!(
                "pixel ({x}, {y}) outside grid image extent {}x{}",
                self.width, self.height
            )));
        }
        let gx = x / max_x * (self.cols - 1) as f64;
        let gy = y / max_y * (self.rows - 1) as f64;
        let c0 = (gx.floor() as usize).min(self.cols - 2);
        let r0 = (gy.floor() as usize).min(self.rows - 2);
        let ax = gx - c0 as f64;
        let ay = gy - r0 as f64;
        Ok(GridSupport {
            nodes: [
                r0 * self.cols + c0,
                r0 * self.cols + c0 + 1,
                (r0 + 1) * self.cols + c0,
                (r0 + 1) * self.cols + c0 + 1,
            ],
            weights: [
                (1.0 - ax) * (1.0 - ay),
                ax * (1.0 - ay),
                (1.0 - ax) * ay,
                ax * ay,
            ],
        })
    }

    /// Bilinear scale at a pixel.
    pub fn interp(&self, x: f64, y: f64) -> Result<f64> {
        let s = self.support(x, y)?;
        Ok(s.nodes
            .iter()
            .zip(&s.weights)
            .map(|(&n, &w)| self.values[n] * w)
            .sum())
    }

    /// Grid values as a single-channel raster (`cols x rows`), the form used
    /// inside keyframe snapshots. The image extent travels separately.
    pub fn to_raster(&self) -> Raster {
        let mut r = Raster::new(self.cols as u32, self.rows as u32, 1);
        for (i, &v) in self.values.iter().enumerate() {
            r.data_mut()[i] = v as f32;
        }
        r
    }

    /// Rebuilds a grid from its raster form and the image extent it spans.
    pub fn from_raster(raster: &Raster, width: u32, height: u32) -> Result<Self> {
        if raster.channels() != 1 {
            return Err(Error::invalid(format!(
                "scale grid raster must have 1 channel, got {}",
                raster.channels()
            )));
        }
        let mut grid = ScaleGrid::uniform(
            raster.height() as usize,
            raster.width() as usize,
            width,
            height,
            1.0,
        )?;
        for (i, v) in grid.values.iter_mut().enumerate() {
            let raw = f64::from(raster.data()[i]);
            if !(raw > 0.0) || !raw.is_finite() {
                return Err(Error::invalid(format!(
                    "scale grid raster holds non-positive value {raw} at node {i}"
                )));
            }
            *v = raw;
        }
        Ok(grid)
    }
}
