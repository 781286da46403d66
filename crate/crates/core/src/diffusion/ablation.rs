//! Paired runs with and without orthogonal attention.

use crate::attention::TextEmbedding;
use crate::error::Result;
use crate::numerics::rng;
use crate::scenes::{make_toy_triplane_dataset, ToyTriplaneExample};
use crate::triplane::Triplane;

use super::consistency::cross_plane_consistency;
use super::denoiser::{Denoiser, DenoiserConfig};
use super::sample::ddpm_sample;
use super::schedule::NoiseSchedule;
use super::train::{train_denoiser, DiffusionTrainConfig, DiffusionTrainReport};

/// Offset of the sampling stream from the run seed.
const SAMPLE_STREAM: u64 = 0x5a3e_11d0;

/// Toy boxes paired with captions embedded by `model`.
pub fn toy_training_set(model: &Denoiser, examples: &[ToyTriplaneExample]) -> Result<Vec<(Triplane, TextEmbedding)>> {
    examples.iter().map(|e| Ok((e.x0.clone(), model.embed(&e.tokens)?))).collect()
}

/// Draws `count` samples whose captions cycle through `data`, with a
/// sampling stream derived from `seed`.
pub fn sample_captions(
    model: &Denoiser,
    data: &[(Triplane, TextEmbedding)],
    count: usize,
    sched: &NoiseSchedule,
    seed: u64,
    clip: Option<(f64, f64)>,
) -> Result<Vec<Triplane>> {
    let text: Vec<TextEmbedding> = (0..count).map(|i| data[i % data.len()].1.clone()).collect();
    ddpm_sample(model, &text, sched, &mut rng::seeded(seed ^ SAMPLE_STREAM), clip)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    /// Network of the OA-on arm; the other arm differs only in `oa`.
    pub denoiser: DenoiserConfig,
    pub dataset_size: usize,
    pub train: DiffusionTrainConfig,
    pub samples: usize,
    pub clip: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationArm {
    pub oa: bool,
    pub training: DiffusionTrainReport,
    /// Consistency error of every sample.
    pub scores: Vec<f64>,
}

impl AblationArm {
    pub fn mean_score(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len().max(1) as f64
    }

    /// Mean of the last `n` training losses.
    pub fn final_loss(&self, n: usize) -> f64 {
        let l = &self.training.losses;
        let tail = &l[l.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub without_oa: AblationArm,
    pub with_oa: AblationArm,
}

impl AblationReport {
    /// `1 - on / off`: the fraction of the consistency error removed by
    /// orthogonal attention.
    pub fn relative_gain(&self) -> f64 {
        1.0 - self.with_oa.mean_score() / self.without_oa.mean_score()
    }
}

/// Trains and samples both arms on the same toy dataset with the same seed,
/// budget and backbone initialization.
pub fn run_ablation(cfg: &AblationConfig, sched: &NoiseSchedule) -> Result<AblationReport> {
    let seed = cfg.train.seed;
    let d = &cfg.denoiser;
    let examples = make_toy_triplane_dataset(cfg.dataset_size, d.res, d.channels, seed)?;
    let arm = |oa: bool| -> Result<AblationArm> {
        let mut model = Denoiser::new(DenoiserConfig { oa, ..*d }, seed)?;
        let data = toy_training_set(&model, &examples)?;
        let training = train_denoiser(&mut model, &data, sched, &cfg.train)?;
        let samples = sample_captions(&model, &data, cfg.samples, sched, seed, cfg.clip)?;
        Ok(AblationArm {
            oa,
            training,
            scores: samples.iter().map(cross_plane_consistency).collect(),
        })
    };
    Ok(AblationReport {
        without_oa: arm(false)?,
        with_oa: arm(true)?,
    })
}
