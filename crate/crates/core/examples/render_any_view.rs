//! Renders a fitted field from an arbitrary orbit pose next to the oracle
//! render of the same scene and writes both as PPM/PGM images.
//!
//! `cargo run --release --example render_any_view -- [azimuth] [elevation] [out-dir]`

use std::path::PathBuf;

use trifield::render::{psnr, Camera, RenderConfig};
use trifield::scenes::{cameras_at, oracle_render, AnalyticScene};
use trifield::train::{fit_scene, FitConfig, View};

fn main() -> trifield::Result<()> {
    let mut args = std::env::args().skip(1);
    let azimuth: f64 = args.next().map_or(137.0, |a| a.parse().expect("azimuth"));
    let elevation: f64 = args.next().map_or(30.0, |a| a.parse().expect("elevation"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "render_any_view".into()));

    let scene = AnalyticScene::two_blob(0.3, 8.0, 3)?;
    let (radius, fov, size) = (4.0, 40f64.to_radians(), 32);
    let azimuths: Vec<f64> = (0..8).map(|k| 22.5 + 45.0 * k as f64).collect();
    let views = cameras_at(&azimuths, 25.0, radius, fov, size, size)?
        .into_iter()
        .map(|camera| Ok(View { target: oracle_render(&scene, &camera, 1024)?, camera }))
        .collect::<trifield::Result<Vec<_>>>()?;
    let fit = fit_scene(&views, &FitConfig { iterations: 600, batch_rays: 256, ..FitConfig::default() })?;

    let cam = Camera::orbit(azimuth, elevation, radius, fov, 64, 64)?;
    let rendered = fit.model.render(&cam, &RenderConfig::default())?;
    let oracle = oracle_render(&scene, &cam, 1024)?;
    std::fs::create_dir_all(&out)?;
    rendered.write_images(&out, "fitted")?;
    oracle.write_images(&out, "oracle")?;
    println!(
        "az {azimuth} el {elevation}: PSNR {:.2} dB against the oracle; images in {}",
        psnr(&rendered.rgb, &oracle.rgb)?,
        out.display()
    );
    Ok(())
}
