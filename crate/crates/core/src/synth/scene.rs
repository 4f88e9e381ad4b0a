//! Ray-traced synthetic scenes.
//!
//! A scene is a closed room (the inward-facing walls of its bounding box)
//! plus a handful of spheres and boxes, each carrying a smooth procedural
//! color field. Because the room is closed, every ray cast from inside the
//! bounds hits a surface, which gives fully dense depth and normal maps.
//! Everything is a pure function of the scene parameters, and scene
//! generation is a pure function of the seed, so repeat runs are bitwise
//! identical.

use crate::error::{Error, Result};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Aabb { min, max }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

/// Smooth per-surface color: each channel is a biased sinusoid over a spatial
/// direction. Low frequencies keep the texture friendly to splat fitting
/// while still varying enough for image metrics to be meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorField {
    pub base: [f64; 3],
    pub amp: [f64; 3],
    pub dir: [[f64; 3]; 3],
    pub phase: [f64; 3],
}

impl ColorField {
    pub fn eval(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for k in 0..3 {
            let d = Vector3::new(self.dir[k][0], self.dir[k][1], self.dir[k][2]);
            c[k] = (self.base[k] + self.amp[k] * (d.dot(p) + self.phase[k]).sin())
                .clamp(0.05, 0.95);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Solid axis-aligned box seen from outside.
    Block { min: Vector3<f64>, max: Vector3<f64> },
    /// The walls of the scene seen from inside.
    Room { min: Vector3<f64>, max: Vector3<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub shape: Shape,
    pub color: ColorField,
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    /// Ray parameter of the hit: `point = origin + t * dir`.
    pub t: f64,
    pub point: Vector3<f64>,
    /// Unit surface normal, oriented toward the ray origin.
    pub normal: Vector3<f64>,
    pub color: Vector3<f64>,
    pub surface: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub surfaces: Vec<Surface>,
    pub bounds: Aabb,
    pub seed: u64,
}

const T_EPS: f64 = 1e-9;

fn sphere_hit(center: &Vector3<f64>, radius: f64, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let oc = o - center;
    let a = d.dot(d);
    let b = oc.dot(d);
    let c = oc.dot(&oc) - radius * radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / a;
    let t1 = (-b + sq) / a;
    if t0 > T_EPS {
        Some(t0)
    } else if t1 > T_EPS {
        Some(t1)
    } else {
        None
    }
}

/// Slab test. Returns `(t_entry, t_exit)` if the ray crosses the box.
fn box_span(
    min: &Vector3<f64>,
    max: &Vector3<f64>,
    o: &Vector3<f64>,
    d: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let mut t_in = f64::NEG_INFINITY;
    let mut t_out = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < min[k] || o[k] > max[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[k];
        let (a, b) = ((min[k] - o[k]) * inv, (max[k] - o[k]) * inv);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        t_in = t_in.max(lo);
        t_out = t_out.min(hi);
        if t_in > t_out {
            return None;
        }
    }
    Some((t_in, t_out))
}

/// Outward normal of the box face containing `p`, picked by the largest
/// normalized coordinate.
fn box_normal(min: &Vector3<f64>, max: &Vector3<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    let center = 0.5 * (min + max);
    let half = 0.5 * (max - min);
    let rel = p - center;
    let mut axis = 0;
    let mut best = f64::NEG_INFINITY;
    for k in 0..3 {
        let v = (rel[k] / half[k]).abs();
        if v > best {
            best = v;
            axis = k;
        }
    }
    let mut n = Vector3::zeros();
    n[axis] = rel[axis].signum();
    n
}

impl Scene {
    /// Nearest surface hit along `origin + t * dir`, `t > 0`. The direction
    /// does not need to be normalized; `t` is in units of `|dir|`.
    pub fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<(f64, usize)> = None;
        for (idx, s) in self.surfaces.iter().enumerate() {
            let t = match &s.shape {
                Shape::Sphere { center, radius } => sphere_hit(center, *radius, origin, dir),
                Shape::Block { min, max } => box_span(min, max, origin, dir)
                    .and_then(|(t_in, _)| (t_in > T_EPS).then_some(t_in)),
                Shape::Room { min, max } => box_span(min, max, origin, dir)
                    .and_then(|(_, t_out)| (t_out > T_EPS).then_some(t_out)),
            };
            if let Some(t) = t {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, idx));
                }
            }
        }
        best.map(|(t, idx)| {
            let point = origin + t * dir;
            let surf = &self.surfaces[idx];
            let mut normal = match &surf.shape {
                Shape::Sphere { center, radius } => (point - center) / *radius,
                Shape::Block { min, max } => box_normal(min, max, &point),
                Shape::Room { min, max } => box_normal(min, max, &point),
            };
            // Orient toward the observer so priors and rendered normals agree.
            if normal.dot(dir) > 0.0 {
                normal = -normal;
            }
            Hit {
                t,
                point,
                normal,
                color: surf.color.eval(&point),
                surface: idx,
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub bounds: Aabb,
    pub n_spheres: usize,
    pub n_blocks: usize,
    /// Objects are kept out of this region so the camera path stays clear.
    pub keep_clear: Option<Aabb>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            bounds: Aabb::new(Vector3::new(-6.0, -4.0, -6.0), Vector3::new(6.0, 4.0, 6.0)),
            n_spheres: 3,
            n_blocks: 2,
            keep_clear: Some(Aabb::new(
                Vector3::new(-1.5, -1.5, -4.5),
                Vector3::new(1.5, 1.5, 1.5),
            )),
            seed: 7,
        }
    }
}

fn random_color_field(rng: &mut ChaCha8Rng) -> ColorField {
    let mut base = [0.0; 3];
    let mut amp = [0.0; 3];
    let mut dir = [[0.0; 3]; 3];
    let mut phase = [0.0; 3];
    for k in 0..3 {
        base[k] = rng.gen_range(0.25..0.75);
        amp[k] = rng.gen_range(0.08..0.22);
        for a in 0..3 {
            dir[k][a] = rng.gen_range(-0.9..0.9);
        }
        phase[k] = rng.gen_range(0.0..std::f64::consts::TAU);
    }
    ColorField {
        base,
        amp,
        dir,
        phase,
    }
}

fn clear_of(keep: &Option<Aabb>, center: &Vector3<f64>, radius: f64) -> bool {
    match keep {
        None => true,
        Some(kc) => {
            // Distance from center to the keep-clear box must exceed radius.
            let mut d2 = 0.0;
            for k in 0..3 {
                let v = (kc.min[k] - center[k]).max(0.0).max(center[k] - kc.max[k]);
                d2 += v * v;
            }
            d2 > radius * radius
        }
    }
}

/// Build a scene from the config. Same config, same scene, down to the bit.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    let span = cfg.bounds.max - cfg.bounds.min;
    if span.min() <= 0.0 {
        return Err(Error::invalid("scene bounds must have positive extent"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut surfaces = vec![Surface {
        shape: Shape::Room {
            min: cfg.bounds.min,
            max: cfg.bounds.max,
        },
        color: random_color_field(&mut rng),
    }];

    let scale = span.min();
    let margin = 0.05 * scale;
    let place = |rng: &mut ChaCha8Rng, radius: f64| -> Option<Vector3<f64>> {
        for _ in 0..64 {
            let mut c = Vector3::zeros();
            for k in 0..3 {
                c[k] = rng.gen_range(cfg.bounds.min[k] + radius + margin
                    ..cfg.bounds.max[k] - radius - margin);
            }
            if clear_of(&cfg.keep_clear, &c, radius) {
                return Some(c);
            }
        }
        None
    };

    for _ in 0..cfg.n_spheres {
        let radius = rng.gen_range(0.08 * scale..0.18 * scale);
        if let Some(center) = place(&mut rng, radius) {
            surfaces.push(Surface {
                shape: Shape::Sphere { center, radius },
                color: random_color_field(&mut rng),
            });
        }
    }
    for _ in 0..cfg.n_blocks {
        let mut half = Vector3::zeros();
        for k in 0..3 {
            half[k] = rng.gen_range(0.06 * scale..0.15 * scale);
        }
        let radius = half.norm();
        if let Some(center) = place(&mut rng, radius) {
            surfaces.push(Surface {
                shape: Shape::Block {
                    min: center - half,
                    max: center + half,
                },
                color: random_color_field(&mut rng),
            });
        }
    }

    Ok(Scene {
        surfaces,
        bounds: cfg.bounds,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_bitwise_deterministic() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&cfg).unwrap();
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let mut cfg = SceneConfig::default();
        let a = generate_scene(&cfg).unwrap();
        cfg.seed = 8;
        let b = generate_scene(&cfg).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn every_interior_ray_hits_the_room() {
        use rand::{Rng, SeedableRng};
        let scene = generate_scene(&SceneConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let o = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-3.0..1.0),
            );
            let d = Vector3::new(
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if d.norm() < 1e-3 {
                continue;
            }
            let hit = scene.trace(&o, &d).expect("closed room, must hit");
            assert!(hit.t > 0.0);
            assert!(scene.bounds.contains(&hit.point) || {
                // Numerical slack at walls.
                let mut ok = true;
                for k in 0..3 {
                    ok &= hit.point[k] > scene.bounds.min[k] - 1e-9
                        && hit.point[k] < scene.bounds.max[k] + 1e-9;
                }
                ok
            });
        }
    }

    #[test]
    fn sphere_depth_along_axis() {
        let scene = Scene {
            surfaces: vec![Surface {
                shape: Shape::Sphere {
                    center: Vector3::new(0.0, 0.0, 5.0),
                    radius: 1.0,
                },
                color: ColorField {
                    base: [0.5; 3],
                    amp: [0.0; 3],
                    dir: [[0.0; 3]; 3],
                    phase: [0.0; 3],
                },
            }],
            bounds: Aabb::new(Vector3::new(-10.0, -10.0, -10.0), Vector3::new(10.0, 10.0, 10.0)),
            seed: 0,
        };
        let hit = scene
            .trace(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert!((hit.t - 4.0).abs() < 1e-12);
        // Normal faces the observer.
        assert!((hit.normal - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn nearest_of_two_surfaces_wins() {
        let color = ColorField {
            base: [0.5; 3],
            amp: [0.0; 3],
            dir: [[0.0; 3]; 3],
            phase: [0.0; 3],
        };
        let scene = Scene {
            surfaces: vec![
                Surface {
                    shape: Shape::Sphere {
                        center: Vector3::new(0.0, 0.0, 8.0),
                        radius: 1.0,
                    },
                    color: color.clone(),
                },
                Surface {
                    shape: Shape::Sphere {
                        center: Vector3::new(0.0, 0.0, 4.0),
                        radius: 1.0,
                    },
                    color,
                },
            ],
            bounds: Aabb::new(Vector3::new(-10.0, -10.0, -10.0), Vector3::new(10.0, 10.0, 10.0)),
            seed: 0,
        };
        let hit = scene
            .trace(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert_eq!(hit.surface, 1);
        assert!((hit.t - 3.0).abs() < 1e-12);
    }

    #[test]
    fn block_entry_face_and_room_exit_face() {
        let color = ColorField {
            base: [0.5; 3],
            amp: [0.0; 3],
            dir: [[0.0; 3]; 3],
            phase: [0.0; 3],
        };
        let scene = Scene {
            surfaces: vec![
                Surface {
                    shape: Shape::Room {
                        min: Vector3::new(-5.0, -5.0, -5.0),
                        max: Vector3::new(5.0, 5.0, 5.0),
                    },
                    color: color.clone(),
                },
                Surface {
                    shape: Shape::Block {
                        min: Vector3::new(-1.0, -1.0, 2.0),
                        max: Vector3::new(1.0, 1.0, 3.0),
                    },
                    color,
                },
            ],
            bounds: Aabb::new(Vector3::new(-5.0, -5.0, -5.0), Vector3::new(5.0, 5.0, 5.0)),
            seed: 0,
        };
        let hit = scene
            .trace(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert!((hit.t - 2.0).abs() < 1e-12, "block front face");
        let hit = scene
            .trace(&Vector3::zeros(), &Vector3::new(0.0, 0.0, -1.0))
            .unwrap();
        assert!((hit.t - 5.0).abs() < 1e-12, "room back wall");
        assert!((hit.normal - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn keep_clear_region_is_respected() {
        let cfg = SceneConfig::default();
        let scene = generate_scene(&cfg).unwrap();
        let kc = cfg.keep_clear.unwrap();
        for s in &scene.surfaces {
            match &s.shape {
                Shape::Sphere { center, radius } => {
                    assert!(clear_of(&Some(kc), center, *radius));
                }
                Shape::Block { min, max } => {
                    let c = 0.5 * (min + max);
                    let r = 0.5 * (max - min).norm();
                    assert!(clear_of(&Some(kc), &c, r));
                }
                Shape::Room { .. } => {}
            }
        }
    }
}
