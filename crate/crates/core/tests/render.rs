use proptest::prelude::*;
use trifield::render::{integrate_ray, ray_weights, sample_points, Camera, Ray};
use trifield::scenes::{cameras_at, oracle_ray, oracle_render, AnalyticScene};
use trifield::train::{fit_scene, FitConfig, View};

fn ascending(n: usize) -> impl Strategy<Value = (Vec<f64>, f64)> {
    proptest::collection::vec(0.01f64..0.5, n + 1).prop_map(|gaps| {
        let mut t = 0.1;
        let mut ts = Vec::with_capacity(gaps.len());
        for g in gaps {
            t += g;
            ts.push(t);
        }
        let far = ts.pop().unwrap();
        (ts, far)
    })
}

fn ray_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (1usize..24).prop_flat_map(|n| {
        (proptest::collection::vec(0.0f64..20.0, n), ascending(n)).prop_map(|(s, (ts, far))| (s, ts, far))
    })
}

/// Distance along a unit ray between its two sphere crossings, if any.
fn sphere_chord(ray: &Ray, radius: f64) -> Option<(f64, f64)> {
    let b: f64 = (0..3).map(|k| ray.origin[k] * ray.dir[k]).sum();
    let c: f64 = ray.origin.iter().map(|x| x * x).sum::<f64>() - radius * radius;
    let disc = b * b - c;
    (disc > 0.0).then(|| (-b - disc.sqrt(), -b + disc.sqrt()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn weights_form_a_sub_distribution((sig, ts, far) in ray_case()) {
        let w = ray_weights(&sig, &ts, far).unwrap();
        let cols = vec![[0.3, 0.6, 0.9]; ts.len()];
        let r = integrate_ray(&sig, &cols, &ts, far).unwrap();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        let total: f64 = w.iter().sum();
        prop_assert!(total <= 1.0 + 1e-12);
        prop_assert!((total - r.mask).abs() < 1e-12);
        prop_assert!(r.mask >= 0.0 && r.mask <= 1.0 + 1e-12);
        prop_assert!(r.depth >= ts[0] - 1e-12 && r.depth <= far + 1e-12);
        prop_assert!((r.rgb[1] - 0.6 * r.mask).abs() < 1e-12);
    }

    #[test]
    fn doubling_density_never_lowers_opacity((sig, ts, far) in ray_case()) {
        let cols = vec![[0.0; 3]; ts.len()];
        let once = integrate_ray(&sig, &cols, &ts, far).unwrap();
        let twice: Vec<f64> = sig.iter().map(|s| 2.0 * s).collect();
        let doubled = integrate_ray(&twice, &cols, &ts, far).unwrap();
        prop_assert!(doubled.mask >= once.mask - 1e-15);
    }

    #[test]
    fn grid_aligned_slab_is_exact(sigma in 0.0f64..10.0, n in 4usize..64, a in 0usize..64, len in 1usize..64) {
        // Samples at bin starts: a slab covering whole bins integrates exactly.
        let (a, len) = (a % n, len.min(n - a % n));
        let dt = 2.0 / n as f64;
        let ts: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * dt).collect();
        let sig: Vec<f64> = (0..n).map(|i| if i >= a && i < a + len { sigma } else { 0.0 }).collect();
        let r = integrate_ray(&sig, &vec![[1.0; 3]; n], &ts, 3.0).unwrap();
        let want = 1.0 - (-sigma * len as f64 * dt).exp();
        prop_assert!((r.mask - want).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_closed_form_sphere_chord(az in 0.0f64..360.0, el in -60.0f64..60.0, row in 0usize..16, col in 0usize..16) {
        let (radius, sigma, n) = (0.5, 4.0, 2048);
        let scene = AnalyticScene::sphere(radius, sigma).unwrap();
        let cam = Camera::orbit(az, el, 4.0, 40f64.to_radians(), 16, 16).unwrap();
        let ray = Ray { origin: cam.position, dir: cam.pixel_direction(row, col), near: cam.near, far: cam.far };
        let r = oracle_ray(&scene, &ray, n).unwrap();
        let dt = (ray.far - ray.near) / n as f64;
        let (mask, depth) = match sphere_chord(&ray, radius) {
            None => (0.0, ray.far),
            Some((t0, t1)) => {
                let len = t1 - t0;
                let tr = (-sigma * len).exp();
                (1.0 - tr, t0 * (1.0 - tr) + 1.0 / sigma - (len + 1.0 / sigma) * tr + tr * ray.far)
            }
        };
        // each boundary is located to within one bin
        prop_assert!((r.mask - mask).abs() <= sigma * dt, "{} vs {}", r.mask, mask);
        prop_assert!((r.depth - depth).abs() <= 2.0 * dt * (1.0 + sigma * ray.far));
    }
}

#[test]
fn ray_through_sphere_centre() {
    let scene = AnalyticScene::sphere(0.5, 4.0).unwrap();
    let ray = Ray { origin: [0.0, 0.0, 4.0], dir: [0.0, 0.0, -1.0], near: 2.0, far: 6.0 };
    let r = oracle_ray(&scene, &ray, 2048).unwrap();
    let want = 1.0 - (-4.0f64).exp();
    assert!((r.mask - want).abs() / want < 0.005, "{}", r.mask);
}

#[test]
fn constant_slab_converges_monotonically() {
    let (sigma, near, far) = (2.0f64, 0.0, 1.0);
    let want = 1.0 - (-sigma * (far - near)).exp();
    let errs: Vec<f64> = [16, 64, 256]
        .iter()
        .map(|&n| {
            let ts = sample_points(near, far, n, None);
            let r = integrate_ray(&vec![sigma; n], &vec![[1.0; 3]; n], &ts, far).unwrap();
            (r.mask - want).abs()
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert!(errs[2] / want < 0.01);
}

#[test]
fn fitted_sphere_matches_fine_oracle() {
    let scene = AnalyticScene::sphere(0.5, 4.0).unwrap();
    let (radius, fov) = (4.0, 40f64.to_radians());
    let azimuths: Vec<f64> = (0..8).map(|k| 22.5 + 45.0 * k as f64).collect();
    let views: Vec<View> = cameras_at(&azimuths, 25.0, radius, fov, 32, 32)
        .unwrap()
        .into_iter()
        .map(|c| View { target: oracle_render(&scene, &c, 1024).unwrap(), camera: c })
        .collect();
    let cfg = FitConfig { iterations: 400, batch_rays: 256, ..FitConfig::default() };
    let fit = fit_scene(&views, &cfg).unwrap();
    let render_cfg = trifield::render::RenderConfig { samples: 128, ..Default::default() };
    for (az, el) in [(0.0, 25.0), (137.0, 30.0)] {
        let cam = Camera::orbit(az, el, radius, fov, 32, 32).unwrap();
        let want = oracle_render(&scene, &cam, 2048).unwrap();
        let got = fit.model.render(&cam, &render_cfg).unwrap();
        let mad = want.rgb.iter().zip(&got.rgb).map(|(a, b)| (a - b).abs()).sum::<f64>() / want.rgb.len() as f64;
        assert!(mad < 0.01, "az {az}: mean abs difference {mad}");
    }
}

#[test]
fn oracle_plateaus_at_fine_sampling() {
    // Smooth fields only: the cube's face colors switch discontinuously at
    // its edges, which converges at first order in the bin width.
    let cam = Camera::orbit(30.0, 20.0, 4.0, 40f64.to_radians(), 12, 12).unwrap();
    let worst = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let blobs = AnalyticScene::two_blob(0.3, 8.0, 3).unwrap();
    let (a, b) = (oracle_render(&blobs, &cam, 2048).unwrap(), oracle_render(&blobs, &cam, 4096).unwrap());
    assert!(worst(&a.rgb, &b.rgb) < 1e-3, "{}", worst(&a.rgb, &b.rgb));
    let cube = AnalyticScene::cube(0.6, 20.0, 0.02).unwrap();
    let (a, b) = (oracle_render(&cube, &cam, 2048).unwrap(), oracle_render(&cube, &cam, 4096).unwrap());
    assert!(worst(&a.mask, &b.mask) < 1e-3, "{}", worst(&a.mask, &b.mask));
}
