//! Trains the toy denoiser on captioned boxes, samples from a few captions
//! and writes the samples as plane previews.
//!
//! `cargo run --release --example toy_diffusion -- [steps] [out-dir]`

use std::path::PathBuf;

use trifield::cli::write_triplane_preview;
use trifield::config::RunConfig;
use trifield::diffusion::{cross_plane_consistency, ddpm_sample, toy_training_set, train_denoiser, Denoiser};
use trifield::numerics::rng;
use trifield::scenes::make_toy_triplane_dataset;

fn main() -> trifield::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    cfg.diffusion.train_steps = args.next().map_or(1000, |s| s.parse().expect("step count"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "toy_diffusion".into()));
    let d = &cfg.diffusion;
    let sched = d.schedule()?;

    let examples = make_toy_triplane_dataset(d.dataset_size, d.res, d.channels, cfg.seed)?;
    let mut model = Denoiser::new(d.denoiser_config(), cfg.seed)?;
    let data = toy_training_set(&model, &examples)?;
    let report = train_denoiser(&mut model, &data, &sched, &d.train_config(cfg.seed)?)?;
    for (i, chunk) in report.losses.chunks(report.losses.len().div_ceil(10).max(1)).enumerate() {
        println!("chunk {i}: mean loss {:.4}", chunk.iter().sum::<f64>() / chunk.len() as f64);
    }

    let picks = [0, 1, 2, 3];
    let texts: Vec<_> = picks.iter().map(|&i| data[i].1.clone()).collect();
    let samples = ddpm_sample(&model, &texts, &sched, &mut rng::seeded(cfg.seed + 1), d.clip_range())?;
    std::fs::create_dir_all(&out)?;
    for (k, (s, &i)) in samples.iter().zip(&picks).enumerate() {
        let path = write_triplane_preview(&out, &format!("sample_{k}"), s)?;
        println!("\"{}\": consistency {:.4} -> {}", examples[i].caption, cross_plane_consistency(s), path.display());
    }
    Ok(())
}
