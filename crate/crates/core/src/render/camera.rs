//! Pinhole cameras, rays and sample placement along rays.

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use rand::Rng as _;

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Half the diagonal of the `[-1, 1]^3` cube.
pub const SCENE_RADIUS: f64 = 1.732_050_807_568_877_2;

const WORLD_UP: [f64; 3] = [0.0, 1.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: [f64; 3],
    pub right: [f64; 3],
    pub up: [f64; 3],
    pub forward: [f64; 3],
    /// Vertical field of view in radians.
    pub fov: f64,
    pub height: usize,
    pub width: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Validates the frame (orthonormal, right-handed) and the bounds.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        position: [f64; 3],
        right: [f64; 3],
        up: [f64; 3],
        forward: [f64; 3],
        fov: f64,
        height: usize,
        width: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::invalid("camera", msg));
        for (name, a) in [("right", right), ("up", up), ("forward", forward)] {
            if (norm(a) - 1.0).abs() > 1e-9 {
                return bad(format!("{name} axis has norm {}", norm(a)));
            }
        }
        if dot(right, up).abs() > 1e-9 || dot(right, forward).abs() > 1e-9 || dot(up, forward).abs() > 1e-9 {
            return bad("orientation is not orthogonal".into());
        }
        let c = cross(right, up);
        if dot(c, forward) > -1.0 + 1e-9 {
            // right x up points backwards in a right-handed camera frame
            return bad("orientation is not right-handed".into());
        }
        if !(fov > 0.0 && fov < std::f64::consts::PI) {
            return bad(format!("field of view {fov} outside (0, pi)"));
        }
        if height == 0 || width == 0 {
            return bad(format!("empty image {height}x{width}"));
        }
        if !(near >= 0.0 && near < far && far.is_finite()) {
            return bad(format!("bounds [{near}, {far}]"));
        }
        if position.iter().any(|v| !v.is_finite()) {
            return bad("non-finite position".into());
        }
        Ok(Camera {
            position,
            right,
            up,
            forward,
            fov,
            height,
            width,
            near,
            far,
        })
    }

    /// Camera at `position` looking at `target` with `+y` as world up.
    ///
    /// Bounds enclose the `[-1, 1]^3` cube: `near = max(0.1, |o| - sqrt 3)`
    /// and `far = |o| + sqrt 3`, measured from the origin.
    pub fn look_at(position: [f64; 3], target: [f64; 3], fov: f64, height: usize, width: usize) -> Result<Self> {
        let f = [target[0] - position[0], target[1] - position[1], target[2] - position[2]];
        if norm(f) < 1e-12 {
            return Err(Error::invalid("camera", "position coincides with target"));
        }
        let forward = normalize(f);
        let r = cross(forward, WORLD_UP);
        if norm(r) < 1e-9 {
            return Err(Error::invalid("camera", "view direction is parallel to world up"));
        }
        let right = normalize(r);
        let up = cross(right, forward);
        let dist = norm(position);
        let near = (dist - SCENE_RADIUS).max(0.1);
        let far = dist + SCENE_RADIUS;
        Camera::new(position, right, up, forward, fov, height, width, near, far)
    }

    /// Camera on a sphere of `radius` around the origin. Azimuth 0 sits on
    /// `+z`, 90 degrees on `+x`; positive elevation looks down from above.
    pub fn orbit(azimuth_deg: f64, elevation_deg: f64, radius: f64, fov: f64, height: usize, width: usize) -> Result<Self> {
        // reduce first so that azimuths a full turn apart give the same bits
        let (az, el) = (azimuth_deg.rem_euclid(360.0).to_radians(), elevation_deg.to_radians());
        let pos = [radius * el.cos() * az.sin(), radius * el.sin(), radius * el.cos() * az.cos()];
        Camera::look_at(pos, [0.0; 3], fov, height, width)
    }

    /// Direction through the center of pixel `(row, col)`, row 0 at the top.
    pub fn pixel_direction(&self, row: usize, col: usize) -> [f64; 3] {
        let half = (self.fov / 2.0).tan();
        let aspect = self.width as f64 / self.height as f64;
        let x = ((col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * half * aspect;
        let y = (1.0 - (row as f64 + 0.5) / self.height as f64 * 2.0) * half;
        normalize([
            self.forward[0] + x * self.right[0] + y * self.up[0],
            self.forward[1] + x * self.right[1] + y * self.up[1],
            self.forward[2] + x * self.right[2] + y * self.up[2],
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }
}

/// One ray per pixel in row-major order.
pub fn generate_rays(cam: &Camera) -> Result<Vec<Ray>> {
    let cam = Camera::new(
        cam.position,
        cam.right,
        cam.up,
        cam.forward,
        cam.fov,
        cam.height,
        cam.width,
        cam.near,
        cam.far,
    )?;
    let mut rays = Vec::with_capacity(cam.height * cam.width);
    for row in 0..cam.height {
        for col in 0..cam.width {
            rays.push(Ray {
                origin: cam.position,
                dir: cam.pixel_direction(row, col),
                near: cam.near,
                far: cam.far,
            });
        }
    }
    Ok(rays)
}

/// `n` ascending distances in `[near, far]`: bin midpoints, or one uniform
/// draw per bin when `rng` is given.
pub fn sample_points(near: f64, far: f64, n: usize, rng: Option<&mut Rng>) -> Vec<f64> {
    let mut ts = Vec::with_capacity(n);
    sample_points_into(near, far, n, rng, &mut ts);
    ts
}

pub(crate) fn sample_points_into(near: f64, far: f64, n: usize, rng: Option<&mut Rng>, ts: &mut Vec<f64>) {
    let width = (far - near) / n as f64;
    match rng {
        None => ts.extend((0..n).map(|i| near + (i as f64 + 0.5) * width)),
        Some(r) => {
            let start = ts.len();
            for i in 0..n {
                let mut t = near + (i as f64 + r.random::<f64>()) * width;
                if i > 0 && t <= ts[start + i - 1] {
                    t = ts[start + i - 1].next_up();
                }
                ts.push(t);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng;

    #[test]
    fn center_pixel_follows_forward() {
        let cam = Camera::orbit(30.0, 20.0, 4.0, 0.8, 5, 7).unwrap();
        let d = cam.pixel_direction(2, 3);
        for k in 0..3 {
            assert!((d[k] - cam.forward[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn corner_pixel_by_hand() {
        let fov = std::f64::consts::FRAC_PI_2;
        let cam = Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], fov, 4, 4).unwrap();
        // forward -z, right +x, up +y; top-left pixel center sits at ndc (-0.75, 0.75)
        let d = cam.pixel_direction(0, 0);
        let n = (0.75f64 * 0.75 * 2.0 + 1.0).sqrt();
        let want = [-0.75 / n, 0.75 / n, -1.0 / n];
        for k in 0..3 {
            assert!((d[k] - want[k]).abs() < 1e-12);
        }
        // the image edge itself is 45 degrees off axis
        assert!(((0.75f64).atan() - (d[0] / -d[2]).atan().abs()).abs() < 1e-12);
    }

    #[test]
    fn full_turns_are_bit_identical() {
        let a = Camera::orbit(0.0, 15.0, 4.0, 0.7, 3, 3).unwrap();
        for az in [360.0, -360.0, 720.0] {
            assert_eq!(Camera::orbit(az, 15.0, 4.0, 0.7, 3, 3).unwrap(), a);
        }
        assert_eq!(Camera::orbit(-90.0, 0.0, 4.0, 0.7, 3, 3).unwrap(), Camera::orbit(270.0, 0.0, 4.0, 0.7, 3, 3).unwrap());
    }

    #[test]
    fn rays_are_unit() {
        let cam = Camera::orbit(200.0, -35.0, 3.0, 1.0, 9, 6).unwrap();
        for r in generate_rays(&cam).unwrap() {
            assert!((norm(r.dir) - 1.0).abs() < 1e-9);
            assert!(r.near < r.far);
        }
    }

    #[test]
    fn degenerate_frames_rejected() {
        assert!(Camera::look_at([0.0, 3.0, 0.0], [0.0; 3], 1.0, 4, 4).is_err());
        assert!(Camera::new([0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0], 1.0, 2, 2, 0.1, 1.0).is_err());
        assert!(Camera::new([0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], 1.0, 2, 2, 0.1, 1.0).is_err());
        assert!(Camera::new([0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0], 3.2, 2, 2, 0.1, 1.0).is_err());
    }

    #[test]
    fn deterministic_samples_are_midpoints() {
        assert_eq!(sample_points(1.0, 3.0, 1, None), vec![2.0]);
        assert_eq!(sample_points(0.0, 4.0, 4, None), vec![0.5, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn stratified_samples_stay_in_their_bins() {
        let mut r = rng::seeded(9);
        for _ in 0..10_000 {
            let ts = sample_points(0.5, 2.5, 8, Some(&mut r));
            for (i, t) in ts.iter().enumerate() {
                let lo = 0.5 + i as f64 * 0.25;
                assert!(*t >= lo && *t < lo + 0.25 + 1e-15);
            }
            assert!(ts.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
