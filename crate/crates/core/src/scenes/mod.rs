//! Analytic scenes with closed-form density and color, a fine-quadrature
//! reference renderer, orbit cameras and the procedural box dataset.

mod toy;

pub use toy::{make_toy_triplane_dataset, ToyBox, ToyTriplaneExample, TOY_COLORS};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::render::{generate_rays, integrate_ray, sample_points, Camera, Ray, RayResult, RenderOutput, SCENE_RADIUS};

/// Face colors of the cube, indexed `[+x, -x, +y, -y, +z, -z]`.
pub const CUBE_FACE_COLORS: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 1.0],
    [0.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Vacuum,
    Sphere,
    Cube,
    TwoBlob,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Vacuum => "vacuum",
            SceneKind::Sphere => "sphere",
            SceneKind::Cube => "cube",
            SceneKind::TwoBlob => "two_blob",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vacuum" => Ok(SceneKind::Vacuum),
            "sphere" => Ok(SceneKind::Sphere),
            "cube" => Ok(SceneKind::Cube),
            "two_blob" => Ok(SceneKind::TwoBlob),
            _ => Err(Error::invalid("scene", format!("unknown scene kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    /// Sphere radius, cube half-size or blob standard deviation, in `(0, 1)`.
    pub radius: f64,
    /// Peak density, positive.
    pub density: f64,
    /// Width of the cube's density falloff; 0 gives a hard boundary.
    pub softness: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            radius: 0.5,
            density: 4.0,
            softness: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Blob {
    center: [f64; 3],
    color: [f64; 3],
}

/// Closed-form field over `[-1, 1]^3`; density is zero outside the cube.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticScene {
    pub kind: SceneKind,
    pub params: SceneParams,
    blobs: [Blob; 2],
}

pub fn make_scene(kind: SceneKind, params: SceneParams, seed: u64) -> Result<AnalyticScene> {
    if kind != SceneKind::Vacuum {
        if !(params.radius > 0.0 && params.radius < 1.0) {
            return Err(Error::invalid("make_scene", format!("radius {} outside (0, 1)", params.radius)));
        }
        if !(params.density > 0.0 && params.density.is_finite()) {
            return Err(Error::invalid("make_scene", format!("density {} must be positive", params.density)));
        }
        if !(params.softness >= 0.0 && params.softness < 1.0) {
            return Err(Error::invalid("make_scene", format!("softness {} outside [0, 1)", params.softness)));
        }
    }
    // mirrored centers keep the two bumps at least 0.6 apart
    let mut r = rng::seeded(seed);
    let center = loop {
        let c: [f64; 3] = [0; 3].map(|_| r.random_range(-0.5..0.5));
        if c.iter().map(|x| x * x).sum::<f64>() >= 0.09 {
            break c;
        }
    };
    let blobs = [
        Blob {
            center,
            color: [1.0, 0.55, 0.1],
        },
        Blob {
            center: center.map(|x| -x),
            color: [0.1, 0.45, 1.0],
        },
    ];
    Ok(AnalyticScene { kind, params, blobs })
}

fn logistic(x: f64) -> f64 {
    crate::numerics::sigmoid(x)
}

impl AnalyticScene {
    pub fn vacuum() -> Self {
        make_scene(SceneKind::Vacuum, SceneParams::default(), 0).expect("vacuum is always valid")
    }

    pub fn sphere(radius: f64, density: f64) -> Result<Self> {
        make_scene(SceneKind::Sphere, SceneParams { radius, density, softness: 0.0 }, 0)
    }

    pub fn cube(half: f64, density: f64, softness: f64) -> Result<Self> {
        make_scene(SceneKind::Cube, SceneParams { radius: half, density, softness }, 0)
    }

    pub fn two_blob(width: f64, amplitude: f64, seed: u64) -> Result<Self> {
        make_scene(SceneKind::TwoBlob, SceneParams { radius: width, density: amplitude, softness: 0.0 }, seed)
    }

    pub fn blob_centers(&self) -> [[f64; 3]; 2] {
        [self.blobs[0].center, self.blobs[1].center]
    }

    fn blob_values(&self, p: [f64; 3]) -> [f64; 2] {
        let s2 = 2.0 * self.params.radius * self.params.radius;
        self.blobs.map(|b| {
            let d2: f64 = (0..3).map(|k| (p[k] - b.center[k]).powi(2)).sum();
            self.params.density * (-d2 / s2).exp()
        })
    }

    pub fn sigma(&self, p: [f64; 3]) -> f64 {
        if p.iter().any(|c| c.abs() > 1.0) {
            return 0.0;
        }
        let SceneParams { radius, density, softness } = self.params;
        match self.kind {
            SceneKind::Vacuum => 0.0,
            SceneKind::Sphere => {
                if p.iter().map(|c| c * c).sum::<f64>() <= radius * radius {
                    density
                } else {
                    0.0
                }
            }
            SceneKind::Cube => {
                let m = p.iter().fold(0.0f64, |a, c| a.max(c.abs()));
                if softness > 0.0 {
                    density * logistic((radius - m) / softness)
                } else if m <= radius {
                    density
                } else {
                    0.0
                }
            }
            SceneKind::TwoBlob => self.blob_values(p).iter().sum(),
        }
    }

    pub fn color(&self, p: [f64; 3]) -> [f64; 3] {
        match self.kind {
            SceneKind::Vacuum => [0.0; 3],
            SceneKind::Sphere => [0.9, 0.6, 0.3],
            SceneKind::Cube => {
                let k = (0..3).fold(0, |best, k| if p[k].abs() > p[best].abs() { k } else { best });
                CUBE_FACE_COLORS[2 * k + usize::from(p[k] < 0.0)]
            }
            SceneKind::TwoBlob => {
                let [a, b] = self.blob_values(p);
                if a + b <= 0.0 {
                    return [0.0; 3];
                }
                let (wa, wb) = (a / (a + b), b / (a + b));
                [0, 1, 2].map(|k| wa * self.blobs[0].color[k] + wb * self.blobs[1].color[k])
            }
        }
    }
}

/// Minimum sample count accepted by the reference renderer.
pub const ORACLE_MIN_SAMPLES: usize = 512;

/// Integrates one ray of `scene` with `n` bin-midpoint samples.
pub fn oracle_ray(scene: &AnalyticScene, ray: &Ray, n: usize) -> Result<RayResult> {
    let ts = sample_points(ray.near, ray.far, n, None);
    let pts: Vec<[f64; 3]> = ts.iter().map(|&t| ray.at(t)).collect();
    let sig: Vec<f64> = pts.iter().map(|&p| scene.sigma(p)).collect();
    let col: Vec<[f64; 3]> = pts.iter().map(|&p| scene.color(p)).collect();
    integrate_ray(&sig, &col, &ts, ray.far)
}

/// Reference render with `n_fine >= 512` samples per ray.
pub fn oracle_render(scene: &AnalyticScene, cam: &Camera, n_fine: usize) -> Result<RenderOutput> {
    if n_fine < ORACLE_MIN_SAMPLES {
        return Err(Error::invalid(
            "oracle_render",
            format!("needs at least {ORACLE_MIN_SAMPLES} samples, got {n_fine}"),
        ));
    }
    let mut rows = Vec::with_capacity(5 * cam.width * cam.height);
    for ray in generate_rays(cam)? {
        let r = oracle_ray(scene, &ray, n_fine)?;
        rows.extend_from_slice(&r.rgb);
        rows.push(r.mask);
        rows.push(r.depth);
    }
    RenderOutput::from_rows(cam.width, cam.height, &rows, cam.near, cam.far)
}

/// `count` cameras evenly spaced in azimuth starting at 0 (the `+z` side),
/// all looking at the origin. `elevation` is in radians.
pub fn camera_orbit(count: usize, radius: f64, elevation: f64, fov: f64, height: usize, width: usize) -> Result<Vec<Camera>> {
    let azimuths: Vec<f64> = (0..count).map(|i| 360.0 * i as f64 / count as f64).collect();
    cameras_at(&azimuths, elevation.to_degrees(), radius, fov, height, width)
}

/// Cameras at the given azimuths (degrees) on a common orbit.
pub fn cameras_at(azimuths_deg: &[f64], elevation_deg: f64, radius: f64, fov: f64, height: usize, width: usize) -> Result<Vec<Camera>> {
    if !(radius > SCENE_RADIUS) {
        return Err(Error::invalid(
            "camera_orbit",
            format!("radius {radius} does not clear the [-1, 1]^3 cube"),
        ));
    }
    azimuths_deg
        .iter()
        .map(|&az| Camera::orbit(az, elevation_deg, radius, fov, height, width))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{dot, norm};

    #[test]
    fn sphere_inside_and_outside() {
        let s = AnalyticScene::sphere(0.5, 4.0).unwrap();
        assert_eq!(s.sigma([0.0; 3]), 4.0);
        assert_eq!(s.sigma([1.0; 3]), 0.0);
        assert!(AnalyticScene::sphere(1.5, 4.0).is_err());
        assert!(AnalyticScene::sphere(0.5, 0.0).is_err());
    }

    #[test]
    fn cube_face_colors() {
        let c = AnalyticScene::cube(0.5, 10.0, 0.0).unwrap();
        assert_eq!(c.color([0.5, 0.1, -0.2]), [1.0, 0.0, 0.0]);
        assert_eq!(c.color([-0.5, 0.1, -0.2]), [0.0, 1.0, 1.0]);
        assert_eq!(c.color([0.1, -0.5, 0.2]), [1.0, 0.0, 1.0]);
        assert_eq!(c.color([0.1, 0.2, -0.5]), [1.0, 1.0, 0.0]);
    }

    #[test]
    fn blob_peaks_at_centers() {
        let s = AnalyticScene::two_blob(0.05, 3.0, 4).unwrap();
        for c in s.blob_centers() {
            assert!((s.sigma(c) - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vacuum_renders_black() {
        let cam = Camera::orbit(0.0, 0.0, 4.0, 0.8, 3, 3).unwrap();
        let out = oracle_render(&AnalyticScene::vacuum(), &cam, 512).unwrap();
        assert!(out.rgb.iter().chain(&out.mask).all(|&v| v == 0.0));
        assert!(oracle_render(&AnalyticScene::vacuum(), &cam, 100).is_err());
    }

    #[test]
    fn orbit_cameras() {
        let level = camera_orbit(4, 4.0, 0.0, 0.8, 8, 8).unwrap();
        for (i, c) in level.iter().enumerate() {
            let o = level[(i + 2) % 4];
            assert!((dot(c.forward, o.forward) + 1.0).abs() < 1e-9);
        }
        let cams = camera_orbit(4, 4.0, 0.3, 0.8, 8, 8).unwrap();
        for c in &cams {
            // looking at the origin: position + t forward hits 0 at t = |position|
            let t = norm(c.position);
            for k in 0..3 {
                assert!((c.position[k] + t * c.forward[k]).abs() < 1e-9);
            }
        }
        assert!((cams[1].position[0] - 4.0 * 0.3f64.cos()).abs() < 1e-12);
        assert!(camera_orbit(4, 1.5, 0.0, 0.8, 8, 8).is_err());
    }
}
