//! Command implementations behind the `trifield` binary.
//!
//! Each command writes only under the configured output directory and
//! returns whether its acceptance check passed. Metrics files hold one
//! `key=value` pair per line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checks::{gradient_suite, Scope};
use crate::config::RunConfig;
use crate::diffusion::{
    cross_plane_consistency, load_denoiser, run_ablation, sample_captions, save_denoiser, toy_training_set,
    train_denoiser, AblationConfig, Denoiser,
};
use crate::error::{Error, Result};
use crate::render::{psnr, write_pgm, write_ppm};
use crate::scenes::{make_toy_triplane_dataset, oracle_render};
use crate::train::{fit_scene, load_fit_checkpoint, save_fit_checkpoint, FitOutcome, FittedField, View};
use crate::triplane::{PlaneId, Triplane};

/// Process exit code for success.
pub const EXIT_OK: i32 = 0;
/// Process exit code for a failed acceptance check or a runtime error.
pub const EXIT_FAILED: i32 = 1;
/// Process exit code for an unreadable or invalid configuration.
pub const EXIT_CONFIG: i32 = 2;

/// Maps a command result to the process exit code.
pub fn exit_code(result: &Result<bool>) -> i32 {
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILED,
        Err(Error::Config(_)) => EXIT_CONFIG,
        Err(_) => EXIT_FAILED,
    }
}

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    lines: Vec<(String, String)>,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl std::fmt::Display) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, format!("{value:.6}"));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

fn pose_key(azimuth: f64, elevation: f64) -> String {
    format!("az{azimuth}_el{elevation}")
}

/// Runs the gradient suite and writes `gradcheck.txt` under `out`.
pub fn run_gradcheck(scope: Scope, seed: u64, out: &Path, fault: Option<&'static str>) -> Result<bool> {
    let rows = gradient_suite(scope, seed, fault)?;
    let mut report = String::new();
    writeln!(report, "{:<28} {:>12} {:>10}  status", "check", "max_rel_err", "tolerance").expect("string write");
    for r in &rows {
        writeln!(
            report,
            "{:<28} {:>12.3e} {:>10.0e}  {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAILED" }
        )
        .expect("string write");
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if let Some(op) = fault {
        writeln!(report, "injected fault: {op}").expect("string write");
    }
    if failed.is_empty() {
        writeln!(report, "all {} checks passed", rows.len()).expect("string write");
    } else {
        writeln!(report, "failed: {}", failed.join(", ")).expect("string write");
    }
    print!("{report}");
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("gradcheck.txt"), &report)?;
    Ok(failed.is_empty())
}

/// Regular grid of `n^3` cell centers in `[-1, 1]^3`.
fn density_probe(n: usize) -> Vec<[f64; 3]> {
    let c = |i: usize| -1.0 + (i as f64 + 0.5) * 2.0 / n as f64;
    let mut pts = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                pts.push([c(i), c(j), c(k)]);
            }
        }
    }
    pts
}

/// Renders the evaluation poses of `cfg` from `model`, compares them with
/// the oracle and records PSNRs. Returns whether both thresholds hold.
fn evaluate(model: &FittedField, cfg: &RunConfig, metrics: &mut Metrics, previews: Option<&Path>) -> Result<bool> {
    let scene = cfg.fit.scene(cfg.seed)?;
    let rcfg = cfg.render.render_config(cfg.seed);
    let poses = cfg.fit.evaluation_poses();
    let heldout = cfg.fit.heldout_azimuths.len();
    let (mut worst_heldout, mut unseen) = (f64::INFINITY, f64::NAN);
    for (i, &(az, el)) in poses.iter().enumerate() {
        let cam = cfg.render.camera(az, el, cfg.fit.view_size)?;
        let pred = model.render(&cam, &rcfg)?;
        let gt = oracle_render(&scene, &cam, cfg.fit.oracle_samples)?;
        let p = psnr(&pred.rgb, &gt.rgb)?;
        metrics.push_f64(format!("psnr_{}", pose_key(az, el)), p);
        if i < heldout {
            worst_heldout = worst_heldout.min(p);
        } else {
            unseen = p;
        }
        if let Some(dir) = previews {
            pred.write_images(dir, &format!("preview_{}", pose_key(az, el)))?;
        }
    }
    metrics.push_f64("heldout_psnr_min", worst_heldout);
    metrics.push_f64("unseen_psnr", unseen);
    let density = model.mean_density(&density_probe(16))?;
    metrics.push("mean_density", format!("{density:.6e}"));
    Ok(worst_heldout >= cfg.fit.min_heldout_psnr && unseen >= cfg.fit.min_unseen_psnr)
}

/// Fits the configured scene and writes `fit.ckpt`, `fit_metrics.txt` and
/// preview renders. Fails on divergence; the checkpoint then holds the last
/// finite parameters.
pub fn run_fit(cfg: &RunConfig) -> Result<bool> {
    let scene = cfg.fit.scene(cfg.seed)?;
    let views = cfg
        .fit
        .training_cameras(&cfg.render)?
        .into_iter()
        .map(|camera| {
            Ok(View {
                target: oracle_render(&scene, &camera, cfg.fit.oracle_samples)?,
                camera,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = fit_scene(&views, &cfg.fit.fit_config(cfg.seed))?;
    let mut model = result.model;
    model.round_to_f32();
    std::fs::create_dir_all(&cfg.out)?;
    save_fit_checkpoint(&cfg.out.join("fit.ckpt"), &model)?;

    let mut m = Metrics::new();
    m.push("scene", &cfg.fit.scene);
    m.push("seed", cfg.seed);
    m.push("iterations", result.losses.len());
    for (i, chunk) in result.losses.chunks(100).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        m.push_f64(format!("loss_step{}", i * 100 + chunk.len()), mean);
    }
    for (step, loss) in &result.validation {
        m.push_f64(format!("validation_step{step}"), *loss);
    }
    m.push("best_step", result.best_step);
    m.push("rejected_steps", result.rejected_steps);
    let diverged = match &result.outcome {
        FitOutcome::Completed => {
            m.push("outcome", "completed");
            false
        }
        FitOutcome::Diverged { step, msg } => {
            m.push("outcome", format!("diverged at step {step}: {msg}"));
            true
        }
    };
    let passed = evaluate(&model, cfg, &mut m, Some(&cfg.out))?;
    m.push("passed", passed && !diverged);
    m.write(&cfg.out.join("fit_metrics.txt"))?;
    print!("{}", m.render());
    Ok(!diverged)
}

/// Renders one pose from a fit checkpoint.
pub fn run_render(cfg: &RunConfig, checkpoint: &Path, azimuth: f64, elevation: f64, size: usize) -> Result<bool> {
    let model = load_fit_checkpoint(checkpoint)?;
    let cam = cfg.render.camera(azimuth, elevation, size)?;
    let out = model.render(&cam, &cfg.render.render_config(cfg.seed))?;
    let stem = format!("view_{}", pose_key(azimuth, elevation));
    out.write_images(&cfg.out, &stem)?;
    println!("wrote {}", cfg.out.join(format!("{stem}.ppm")).display());
    Ok(out.is_finite())
}

/// Compares a fit checkpoint with the oracle at the evaluation poses and
/// writes `eval_metrics.txt`.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<bool> {
    let model = load_fit_checkpoint(checkpoint)?;
    let mut m = Metrics::new();
    m.push("checkpoint", checkpoint.display());
    let passed = evaluate(&model, cfg, &mut m, None)?;
    m.push("passed", passed);
    m.write(&cfg.out.join("eval_metrics.txt"))?;
    print!("{}", m.render());
    Ok(passed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionCommand {
    Train,
    Sample,
    Ablate,
}

/// Side-by-side xy | xz | yz image of a triplane: the first three channels
/// as RGB when there are at least three, channel 0 as gray otherwise.
/// Returns `(width, height, values, is_rgb)`.
pub fn triplane_preview(tri: &Triplane) -> (usize, usize, Vec<f64>, bool) {
    let d = tri.res();
    let rgb = tri.channels() >= 3;
    let per = if rgb { 3 } else { 1 };
    let width = 3 * d;
    let mut px = vec![0.0; width * d * per];
    for (k, plane) in PlaneId::ALL.into_iter().enumerate() {
        for v in 0..d {
            for u in 0..d {
                let t = tri.texel(plane, u, v);
                // v grows downward in the image
                let at = ((d - 1 - v) * width + k * d + u) * per;
                px[at..at + per].copy_from_slice(&t[..per]);
            }
        }
    }
    (width, d, px, rgb)
}

pub fn write_triplane_preview(dir: &Path, stem: &str, tri: &Triplane) -> Result<PathBuf> {
    let (w, h, px, rgb) = triplane_preview(tri);
    let mut buf = Vec::new();
    let path = if rgb {
        write_ppm(&mut buf, w, h, &px)?;
        dir.join(format!("{stem}.ppm"))
    } else {
        write_pgm(&mut buf, w, h, &px)?;
        dir.join(format!("{stem}.pgm"))
    };
    std::fs::create_dir_all(dir)?;
    std::fs::write(&path, buf)?;
    Ok(path)
}

fn diffusion_train(cfg: &RunConfig) -> Result<bool> {
    let d = &cfg.diffusion;
    let sched = d.schedule()?;
    let mut model = Denoiser::new(d.denoiser_config(), cfg.seed)?;
    let examples = make_toy_triplane_dataset(d.dataset_size, d.res, d.channels, cfg.seed)?;
    let data = toy_training_set(&model, &examples)?;
    let report = train_denoiser(&mut model, &data, &sched, &d.train_config(cfg.seed)?)?;
    model.store.round_to_f32();
    std::fs::create_dir_all(&cfg.out)?;
    save_denoiser(&cfg.out.join("denoiser.ckpt"), &model)?;
    let mut m = Metrics::new();
    m.push("seed", cfg.seed);
    m.push("oa", d.oa);
    m.push("stage", &d.stage);
    m.push("steps", report.losses.len());
    for (i, chunk) in report.losses.chunks(100).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        m.push_f64(format!("loss_step{}", i * 100 + chunk.len()), mean);
    }
    let tail = &report.losses[report.losses.len().saturating_sub(100)..];
    m.push_f64("final_loss", tail.iter().sum::<f64>() / tail.len().max(1) as f64);
    m.push("rejected_steps", report.rejected_steps);
    if let Some(step) = report.diverged_at {
        m.push("diverged_at", step);
    }
    m.write(&cfg.out.join("diffusion_train_metrics.txt"))?;
    print!("{}", m.render());
    Ok(report.diverged_at.is_none())
}

fn diffusion_sample(cfg: &RunConfig, checkpoint: &Path) -> Result<bool> {
    let d = &cfg.diffusion;
    let model = load_denoiser(checkpoint)?;
    let sched = d.schedule()?;
    let mc = model.cfg;
    let examples = make_toy_triplane_dataset(d.dataset_size, mc.res, mc.channels, cfg.seed)?;
    let data = toy_training_set(&model, &examples)?;
    let samples = sample_captions(&model, &data, d.samples, &sched, cfg.seed, d.clip_range())?;
    let mut m = Metrics::new();
    m.push("seed", cfg.seed);
    m.push("samples", samples.len());
    let mut total = 0.0;
    for (i, s) in samples.iter().enumerate() {
        write_triplane_preview(&cfg.out, &format!("sample_{i:03}"), s)?;
        let score = cross_plane_consistency(s);
        total += score;
        m.push(format!("caption_{i:03}"), &examples[i % examples.len()].caption);
        m.push_f64(format!("consistency_{i:03}"), score);
    }
    m.push_f64("mean_consistency", total / samples.len() as f64);
    m.write(&cfg.out.join("diffusion_sample_metrics.txt"))?;
    print!("{}", m.render());
    Ok(samples.iter().all(Triplane::is_finite))
}

fn diffusion_ablate(cfg: &RunConfig) -> Result<bool> {
    let d = &cfg.diffusion;
    let sched = d.schedule()?;
    let acfg = AblationConfig {
        denoiser: d.denoiser_config(),
        dataset_size: d.dataset_size,
        train: d.train_config(cfg.seed)?,
        samples: d.samples,
        clip: d.clip_range(),
    };
    let report = run_ablation(&acfg, &sched)?;
    let gain = report.relative_gain();
    let passed = gain >= d.min_relative_gain && report.with_oa.mean_score() < report.without_oa.mean_score();
    let mut table = String::new();
    writeln!(table, "{:<8} {:>12} {:>18}", "oa", "final_loss", "mean_consistency").expect("string write");
    for arm in [&report.without_oa, &report.with_oa] {
        writeln!(
            table,
            "{:<8} {:>12.6} {:>18.6}",
            if arm.oa { "on" } else { "off" },
            arm.final_loss(100),
            arm.mean_score()
        )
        .expect("string write");
    }
    writeln!(table, "relative gain {:.4} (required {:.4})", gain, d.min_relative_gain).expect("string write");
    print!("{table}");
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("ablation.txt"), &table)?;
    let mut m = Metrics::new();
    m.push("seed", cfg.seed);
    m.push_f64("consistency_oa_off", report.without_oa.mean_score());
    m.push_f64("consistency_oa_on", report.with_oa.mean_score());
    m.push_f64("final_loss_oa_off", report.without_oa.final_loss(100));
    m.push_f64("final_loss_oa_on", report.with_oa.final_loss(100));
    m.push_f64("relative_gain", gain);
    m.push("passed", passed);
    m.write(&cfg.out.join("ablation_metrics.txt"))?;
    Ok(passed)
}

pub fn run_diffusion(cfg: &RunConfig, command: DiffusionCommand, checkpoint: Option<&Path>) -> Result<bool> {
    match command {
        DiffusionCommand::Train => diffusion_train(cfg),
        DiffusionCommand::Sample => {
            let default = cfg.out.join("denoiser.ckpt");
            diffusion_sample(cfg, checkpoint.unwrap_or(&default))
        }
        DiffusionCommand::Ablate => diffusion_ablate(cfg),
    }
}
