//! Text-conditioned denoising diffusion over triplanes.

mod ablation;
mod checkpoint;
mod consistency;
mod denoiser;
mod objective;
mod sample;
mod schedule;
mod train;

pub use ablation::{run_ablation, sample_captions, toy_training_set, AblationArm, AblationConfig, AblationReport};
pub use checkpoint::{load_denoiser, read_denoiser, save_denoiser, write_denoiser, DENOISER_MAGIC, DENOISER_VERSION};
pub use consistency::{cross_plane_consistency, independent_planes_expectation};
pub use denoiser::{Denoiser, DenoiserConfig, ADAPTER_PREFIX, OA_PREFIX, TEXT_TABLE};
pub use objective::{epsilon_loss, epsilon_loss_with, stack, LossMode};
pub use sample::{ddpm_sample, ddpm_sample_with};
pub use schedule::{make_schedule, q_sample, NoiseSchedule};
pub use train::{apply_stage, train_denoiser, DiffusionTrainConfig, DiffusionTrainReport, Stage};
