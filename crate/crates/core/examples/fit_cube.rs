//! Fits a triplane field to oracle renders of the soft-edged cube and
//! reports PSNR on held-out and unseen poses.
//!
//! The shipped settings take several minutes in release mode; pass an
//! iteration count to shorten the run: `cargo run --release --example
//! fit_cube 500`.

use trifield::config::RunConfig;
use trifield::render::psnr;
use trifield::scenes::oracle_render;
use trifield::train::{fit_scene, View};

fn main() -> trifield::Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.fit.iterations = n.parse().expect("iteration count");
    }
    let fit = &cfg.fit;
    let scene = fit.scene(cfg.seed)?;
    let views = fit
        .training_cameras(&cfg.render)?
        .into_iter()
        .map(|camera| Ok(View { target: oracle_render(&scene, &camera, fit.oracle_samples)?, camera }))
        .collect::<trifield::Result<Vec<_>>>()?;
    println!("{} training views at {}px", views.len(), fit.view_size);

    let result = fit_scene(&views, &fit.fit_config(cfg.seed))?;
    for (step, loss) in &result.validation {
        println!("step {step:>5}: validation loss {loss:.5}");
    }
    println!("best step {}, rejected steps {}, outcome {:?}", result.best_step, result.rejected_steps, result.outcome);

    let render_cfg = cfg.render.render_config(cfg.seed);
    for (az, el) in fit.evaluation_poses() {
        let cam = cfg.render.camera(az, el, fit.view_size)?;
        let gt = oracle_render(&scene, &cam, fit.oracle_samples)?;
        let got = result.model.render(&cam, &render_cfg)?;
        println!("az {az:>5.1} el {el:>4.1}: PSNR {:.2} dB", psnr(&got.rgb, &gt.rgb)?);
    }
    Ok(())
}
