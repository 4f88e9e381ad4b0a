//! Peak signal-to-noise ratio between rasters.

use crate::error::{Error, Result};
use crate::io::Raster;

/// `10 * log10(1 / MSE)` over every channel of every pixel, in dB, assuming
/// values in `[0, 1]`. Identical images return `f64::INFINITY`.
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.data().is_empty() {
        return Err(Error::invalid("psnr of an empty raster"));
    }
    let mut sum_sq = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        sum_sq += d * d;
    }
    let mse = sum_sq / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

pub(crate) fn check_same_shape(a: &Raster, b: &Raster) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::invalid(format!(
            "raster shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}
