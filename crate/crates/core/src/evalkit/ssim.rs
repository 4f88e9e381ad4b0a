//! Structural similarity with the canonical Gaussian window.

use crate::error::{Error, Result};
use crate::evalkit::psnr::check_same_shape;
use crate::io::Raster;

/// Side length of the local window, in pixels.
pub const SSIM_WINDOW: usize = 11;
/// Standard deviation of the Gaussian window weights.
pub const SSIM_SIGMA: f64 = 1.5;
/// Stabilizer for the luminance term, on a unit dynamic range.
pub const SSIM_K1: f64 = 0.01;
/// Stabilizer for the contrast term, on a unit dynamic range.
pub const SSIM_K2: f64 = 0.03;

/// Luminance weights used to collapse three-channel images to grayscale.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Mean local structural similarity between two rasters, in `[-1, 1]`.
///
/// Three-channel images are converted to luminance first; single-channel
/// images are used as is. Local means, variances and covariance are taken
/// under an 11x11 Gaussian window (sigma 1.5) at every fully interior
/// position, combined with the usual stabilizers `k1 = 0.01`, `k2 = 0.03`
/// on a unit dynamic range, and averaged.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    check_same_shape(a, b)?;
    let w = a.width() as usize;
    let h = a.height() as usize;
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }

    let la = luma(a)?;
    let lb = luma(b)?;
    let aa: Vec<f64> = la.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = lb.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x * y).collect();

    let k = kernel_1d();
    let mu_a = filter_valid(&la, w, h, &k);
    let mu_b = filter_valid(&lb, w, h, &k);
    let e_aa = filter_valid(&aa, w, h, &k);
    let e_bb = filter_valid(&bb, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

fn luma(img: &Raster) -> Result<Vec<f64>> {
    match img.channels() {
        1 => Ok(img.data().iter().map(|&v| v as f64).collect()),
        3 => Ok(img
            .data()
            .chunks_exact(3)
            .map(|px| LUMA[0] * px[0] as f64 + LUMA[1] * px[1] as f64 + LUMA[2] * px[2] as f64)
            .collect()),
        c => Err(Error::invalid(format!(
            "ssim expects 1 or 3 channels, got {c}"
        ))),
    }
}

fn kernel_1d() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, ki) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *ki = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *ki;
    }
    for ki in &mut k {
        *ki /= sum;
    }
    k
}

/// Separable valid-region Gaussian filter: the output covers the
/// `(w - 10) x (h - 10)` positions where the window fits entirely.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, ki) in k.iter().enumerate() {
                acc += ki * img[y * w + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, ki) in k.iter().enumerate() {
                acc += ki * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}
