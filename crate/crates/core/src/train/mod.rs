//! Losses, the optimizer and per-scene fitting.

mod checkpoint;
mod fit;
mod loss;
mod optim;

pub use checkpoint::{
    load_fit_checkpoint, read_fit_checkpoint, save_fit_checkpoint, write_fit_checkpoint, HEADS_MAGIC, HEADS_VERSION,
};
pub use fit::{fit_scene, FitConfig, FitOutcome, FitResult, FittedField, View};
pub use loss::{ray_loss, render_loss, render_rows, view_loss, LossWeights, Perceptual, PooledMse};
pub use optim::{AdamW, AdamWConfig};
