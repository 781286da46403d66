//! Trains the denoiser with and without orthogonal attention on the same
//! data and compares how well the sampled planes agree with each other.
//!
//! The shipped settings take several minutes in release mode; pass a
//! smaller step count for a quick look.

use trifield::config::RunConfig;
use trifield::diffusion::{independent_planes_expectation, run_ablation, AblationConfig};

fn main() -> trifield::Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.diffusion.train_steps = n.parse().expect("step count");
    }
    let d = &cfg.diffusion;
    let acfg = AblationConfig {
        denoiser: d.denoiser_config(),
        dataset_size: d.dataset_size,
        train: d.train_config(cfg.seed)?,
        samples: d.samples,
        clip: d.clip_range(),
    };
    let report = run_ablation(&acfg, &d.schedule()?)?;
    for arm in [&report.without_oa, &report.with_oa] {
        println!(
            "oa {:<5}: final loss {:.4}, mean consistency error {:.4}",
            arm.oa,
            arm.final_loss(100),
            arm.mean_score()
        );
    }
    println!("independent planes baseline {:.4}", independent_planes_expectation(d.res));
    println!("relative reduction {:.1}%", 100.0 * report.relative_gain());
    Ok(())
}
