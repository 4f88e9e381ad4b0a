//! Closed-form Sim(3) point-set alignment (Umeyama's method).

use crate::error::{Error, Result};
use crate::geometry::Sim3;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};

/// Least-squares similarity transform mapping `source` onto `reference`.
///
/// Needs at least three points, and the source cloud must not be collinear
/// (the rotation about the line would be unobservable).
pub fn sim3_align(source: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<Sim3> {
    if source.len() != reference.len() {
        return Err(Error::invalid(format!(
            "point counts differ: {} vs {}",
            source.len(),
            reference.len()
        )));
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "sim3 alignment needs at least 3 point pairs, got {n}"
        )));
    }

    let inv_n = 1.0 / n as f64;
    let mu_p: Vector3<f64> = source.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_q: Vector3<f64> = reference.iter().sum::<Vector3<f64>>() * inv_n;

    let mut sigma_pq = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, q) in source.iter().zip(reference) {
        let dp = p - mu_p;
        let dq = q - mu_q;
        sigma_pq += dq * dp.transpose();
        var_p += dp.norm_squared();
    }
    sigma_pq *= inv_n;
    var_p *= inv_n;

    if var_p < 1e-18 {
        return Err(Error::invalid("source points are all identical"));
    }

    let svd = sigma_pq.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::invalid("svd failed"))?;
    let vt = svd.v_t.ok_or_else(|| Error::invalid("svd failed"))?;
    let d = svd.singular_values;

    // A collinear cloud has (numerically) rank-1 cross covariance.
    if d[1] <= 1e-9 * d[0].max(1e-300) {
        return Err(Error::invalid(
            "source points are collinear, rotation is unobservable",
        ));
    }

    let mut s = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * vt.determinant()) < 0.0 {
        s[2] = -1.0;
    }

    let rot = u * Matrix3::from_diagonal(&s) * vt;
    let scale = (d[0] * s[0] + d[1] * s[1] + d[2] * s[2]) / var_p;
    let translation = mu_q - scale * (rot * mu_p);

    Ok(Sim3 {
        scale,
        rotation: UnitQuaternion::from_matrix(&rot),
        translation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                )
            })
            .collect()
    }

    #[test]
    fn self_alignment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let cloud = random_cloud(&mut rng, 25);
        let s = sim3_align(&cloud, &cloud).unwrap();
        assert!((s.scale - 1.0).abs() < 1e-12);
        assert!(s.rotation.angle() < 1e-12);
        assert!(s.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_known_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let truth = Sim3 {
                scale: rng.gen_range(0.2..4.0),
                rotation: UnitQuaternion::from_scaled_axis(Vector3::new(
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                )),
                translation: Vector3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                ),
            };
            let src = random_cloud(&mut rng, 12);
            let dst: Vec<_> = src.iter().map(|p| truth.transform(p)).collect();
            let est = sim3_align(&src, &dst).unwrap();
            assert!((est.scale - truth.scale).abs() < 1e-9);
            assert!(est.rotation.angle_to(&truth.rotation) < 1e-9);
            assert!((est.translation - truth.translation).norm() < 1e-8);
            for (p, q) in src.iter().zip(&dst) {
                assert!((est.transform(p) - q).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn too_few_points_rejected() {
        let a = vec![Vector3::zeros(), Vector3::x()];
        assert!(sim3_align(&a, &a).is_err());
    }

    #[test]
    fn collinear_points_rejected() {
        let src: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let dst = src.clone();
        assert!(sim3_align(&src, &dst).is_err());
    }
}
