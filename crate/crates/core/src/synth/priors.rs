//! Corrupted depth priors: what a learned depth network would hand us,
//! emulated as ground-truth depth times a smooth multiplicative bias field
//! plus multiplicative Gaussian noise.

use crate::io::Raster;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Multiplicative bias over the image, evaluated on normalized coordinates
/// `u, v` in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BiasField {
    Constant(f64),
    /// `c0 + c1 u + c2 v + c3 u v + c4 u^2 + c5 v^2`.
    Poly2([f64; 6]),
}

impl BiasField {
    pub fn eval(&self, x: u32, y: u32, width: u32, height: u32) -> f64 {
        match self {
            BiasField::Constant(c) => *c,
            BiasField::Poly2(c) => {
                let u = if width > 1 {
                    2.0 * x as f64 / (width - 1) as f64 - 1.0
                } else {
                    0.0
                };
                let v = if height > 1 {
                    2.0 * y as f64 / (height - 1) as f64 - 1.0
                } else {
                    0.0
                };
                c[0] + c[1] * u + c[2] * v + c[3] * u * v + c[4] * u * u + c[5] * v * v
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthPriorParams {
    pub bias: BiasField,
    /// Relative standard deviation of the multiplicative noise.
    pub noise_sigma: f64,
}

impl Default for DepthPriorParams {
    fn default() -> Self {
        DepthPriorParams {
            bias: BiasField::Constant(1.0),
            noise_sigma: 0.0,
        }
    }
}

/// Corrupt an exact depth map: `d_prior = d * bias(u, v) * (1 + N(0, sigma))`,
/// clamped to stay positive. Returns the prior and the bias field that was
/// actually applied, recorded per pixel as recovery ground truth.
pub fn corrupt_depth_prior(
    exact: &Raster,
    params: &DepthPriorParams,
    rng: &mut ChaCha8Rng,
) -> (Raster, Raster) {
    assert_eq!(exact.channels(), 1, "depth raster is single channel");
    let (w, h) = (exact.width(), exact.height());
    let mut prior = Raster::new(w, h, 1);
    let mut bias_truth = Raster::new(w, h, 1);
    let noise = if params.noise_sigma > 0.0 {
        Some(Normal::new(0.0, params.noise_sigma).expect("sigma checked positive"))
    } else {
        None
    };
    for y in 0..h {
        for x in 0..w {
            let b = params.bias.eval(x, y, w, h);
            let m = match &noise {
                Some(n) => 1.0 + n.sample(rng),
                None => 1.0,
            };
            let d = (exact.get(x, y, 0) as f64) * b * m;
            prior.set(x, y, 0, d.max(1e-4) as f32);
            bias_truth.set(x, y, 0, b as f32);
        }
    }
    // Keep the stream position independent of whether noise was drawn, so
    // toggling sigma does not shift later consumers of the same rng.
    let _ = rng.gen::<u64>();
    (prior, bias_truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ramp_depth(w: u32, h: u32) -> Raster {
        let mut r = Raster::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                r.set(x, y, 0, 2.0 + 0.01 * (x + y * w) as f32);
            }
        }
        r
    }

    #[test]
    fn identity_corruption_is_bitwise_noop() {
        let exact = ramp_depth(16, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (prior, bias) = corrupt_depth_prior(&exact, &DepthPriorParams::default(), &mut rng);
        assert_eq!(prior, exact);
        assert!(bias.data().iter().all(|&b| b == 1.0));
    }

    #[test]
    fn constant_bias_scales_depth() {
        let exact = ramp_depth(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = DepthPriorParams {
            bias: BiasField::Constant(1.2),
            noise_sigma: 0.0,
        };
        let (prior, _) = corrupt_depth_prior(&exact, &params, &mut rng);
        for (p, e) in prior.data().iter().zip(exact.data()) {
            assert!((*p as f64 - 1.2 * *e as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_statistics_match_request() {
        // Multiplicative noise with sigma 0.05 on constant depth 2: the
        // sample mean and std of prior/exact should sit inside generous
        // gaussian bounds (5 sigma over n samples).
        let exact = Raster::filled(64, 64, 1, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = 0.05;
        let params = DepthPriorParams {
            bias: BiasField::Constant(1.0),
            noise_sigma: sigma,
        };
        let (prior, _) = corrupt_depth_prior(&exact, &params, &mut rng);
        let ratios: Vec<f64> = prior
            .data()
            .iter()
            .zip(exact.data())
            .map(|(p, e)| *p as f64 / *e as f64)
            .collect();
        let n = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / n;
        let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        let mean_tol = 5.0 * sigma / n.sqrt();
        assert!((mean - 1.0).abs() < mean_tol, "mean {mean}");
        // Std of the std estimator is roughly sigma/sqrt(2n).
        let std_tol = 5.0 * sigma / (2.0 * n).sqrt();
        assert!((std - sigma).abs() < std_tol, "std {std}");
    }

    #[test]
    fn prior_stays_positive_under_heavy_noise() {
        let exact = Raster::filled(32, 32, 1, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = DepthPriorParams {
            bias: BiasField::Constant(1.0),
            noise_sigma: 2.0,
        };
        let (prior, _) = corrupt_depth_prior(&exact, &params, &mut rng);
        assert!(prior.data().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn poly_bias_recorded_as_ground_truth() {
        let exact = ramp_depth(10, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field = BiasField::Poly2([1.1, 0.05, -0.03, 0.01, 0.02, -0.02]);
        let params = DepthPriorParams {
            bias: field.clone(),
            noise_sigma: 0.0,
        };
        let (prior, bias) = corrupt_depth_prior(&exact, &params, &mut rng);
        for y in 0..6 {
            for x in 0..10 {
                let b = field.eval(x, y, 10, 6);
                assert!((bias.get(x, y, 0) as f64 - b).abs() < 1e-6);
                assert!(
                    (prior.get(x, y, 0) as f64 - exact.get(x, y, 0) as f64 * b).abs() < 1e-5
                );
            }
        }
    }
}
