//! TOML run configuration. Every key is optional and unknown keys are
//! rejected.
//!
//! ```toml
//! seed = 7
//! out = "runs/cube"
//!
//! [fit]
//! scene = "cube"
//! iterations = 3000
//!
//! [diffusion]
//! train_steps = 3000
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::diffusion::{make_schedule, DenoiserConfig, DiffusionTrainConfig, NoiseSchedule, Stage};
use crate::error::{Error, Result};
use crate::render::{Camera, HeadsConfig, RenderConfig};
use crate::scenes::{cameras_at, make_scene, AnalyticScene, SceneKind, SceneParams};
use crate::train::{FitConfig, LossWeights};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every stochastic step of a run.
    pub seed: u64,
    /// Directory all outputs are written under.
    pub out: PathBuf,
    pub render: RenderSection,
    pub fit: FitSection,
    pub diffusion: DiffusionSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            render: RenderSection::default(),
            fit: FitSection::default(),
            diffusion: DiffusionSection::default(),
        }
    }
}

/// Camera and quadrature settings for rendering and evaluation.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    /// Samples per ray.
    pub samples: usize,
    pub stratified: bool,
    /// Zero density outside `[-1, 1]^3`.
    pub clip_to_volume: bool,
    /// Square image side in pixels.
    pub size: usize,
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
    /// Orbit radius of the camera.
    pub radius: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

impl Default for RenderSection {
    fn default() -> Self {
        RenderSection {
            samples: 128,
            stratified: false,
            clip_to_volume: true,
            size: 64,
            fov_deg: 40.0,
            radius: 4.0,
            azimuth: 0.0,
            elevation: 25.0,
        }
    }
}

impl RenderSection {
    pub fn render_config(&self, seed: u64) -> RenderConfig {
        RenderConfig {
            samples: self.samples,
            stratified: self.stratified,
            seed,
            clip_to_volume: self.clip_to_volume,
        }
    }

    pub fn camera(&self, azimuth: f64, elevation: f64, size: usize) -> Result<Camera> {
        Camera::orbit(azimuth, elevation, self.radius, self.fov_deg.to_radians(), size, size)
    }
}

/// Scene, training views and optimizer settings for fitting.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// `vacuum`, `sphere`, `cube` or `two_blob`.
    pub scene: String,
    /// Sphere radius, cube half-size or blob width.
    pub scene_size: f64,
    pub scene_density: f64,
    /// Width of the cube's density falloff.
    pub scene_softness: f64,
    /// Training views, evenly spaced in azimuth from `view_azimuth_offset`.
    pub views: usize,
    pub view_azimuth_offset: f64,
    pub view_elevation: f64,
    pub view_size: usize,
    /// Quadrature samples of the oracle renderer.
    pub oracle_samples: usize,
    pub iterations: usize,
    pub batch_rays: usize,
    pub samples: usize,
    pub res: usize,
    pub channels: usize,
    pub lr_planes: f64,
    pub lr_heads: f64,
    pub init_std: f64,
    pub hidden: usize,
    pub layers: usize,
    pub frequencies: usize,
    pub density_bias: f64,
    pub mask_weight: f64,
    pub depth_weight: f64,
    pub validate_every: usize,
    pub validation_rays: usize,
    /// Evaluation views never used for training.
    pub heldout_azimuths: Vec<f64>,
    pub heldout_elevation: f64,
    pub unseen_azimuth: f64,
    pub unseen_elevation: f64,
    /// Thresholds used by `eval`.
    pub min_heldout_psnr: f64,
    pub min_unseen_psnr: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            scene: "cube".into(),
            scene_size: 0.6,
            scene_density: 20.0,
            scene_softness: 0.02,
            views: 8,
            view_azimuth_offset: 22.5,
            view_elevation: 25.0,
            view_size: 64,
            oracle_samples: 1024,
            iterations: 3000,
            batch_rays: 512,
            samples: 48,
            res: 32,
            channels: 8,
            lr_planes: 5e-3,
            lr_heads: 5e-4,
            init_std: 0.1,
            hidden: 64,
            layers: 1,
            frequencies: 0,
            density_bias: 0.0,
            mask_weight: 0.5,
            depth_weight: 1.0,
            validate_every: 100,
            validation_rays: 1024,
            heldout_azimuths: vec![0.0, 90.0, 180.0, 270.0],
            heldout_elevation: 25.0,
            unseen_azimuth: 137.0,
            unseen_elevation: 30.0,
            min_heldout_psnr: 25.0,
            min_unseen_psnr: 22.0,
        }
    }
}

impl FitSection {
    pub fn scene(&self, seed: u64) -> Result<AnalyticScene> {
        let kind = SceneKind::parse(&self.scene).map_err(|e| Error::Config(format!("fit.scene: {e}")))?;
        let params = SceneParams {
            radius: self.scene_size,
            density: self.scene_density,
            softness: self.scene_softness,
        };
        make_scene(kind, params, seed).map_err(|e| Error::Config(format!("fit: {e}")))
    }

    pub fn training_azimuths(&self) -> Vec<f64> {
        (0..self.views)
            .map(|k| self.view_azimuth_offset + 360.0 * k as f64 / self.views as f64)
            .collect()
    }

    pub fn training_cameras(&self, render: &RenderSection) -> Result<Vec<Camera>> {
        cameras_at(
            &self.training_azimuths(),
            self.view_elevation,
            render.radius,
            render.fov_deg.to_radians(),
            self.view_size,
            self.view_size,
        )
    }

    /// Held-out views followed by the unseen view, as `(azimuth, elevation)`.
    pub fn evaluation_poses(&self) -> Vec<(f64, f64)> {
        let mut poses: Vec<_> = self.heldout_azimuths.iter().map(|&a| (a, self.heldout_elevation)).collect();
        poses.push((self.unseen_azimuth, self.unseen_elevation));
        poses
    }

    pub fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            iterations: self.iterations,
            batch_rays: self.batch_rays,
            samples: self.samples,
            res: self.res,
            channels: self.channels,
            lr_planes: self.lr_planes,
            lr_heads: self.lr_heads,
            init_std: self.init_std,
            heads: HeadsConfig {
                hidden: self.hidden,
                layers: self.layers,
                frequencies: self.frequencies,
                density_bias: self.density_bias,
            },
            weights: LossWeights {
                mask: self.mask_weight,
                depth: self.depth_weight,
                ..LossWeights::default()
            },
            seed,
            validate_every: self.validate_every,
            validation_rays: self.validation_rays,
        }
    }
}

/// Toy dataset, network, schedule and training settings for diffusion.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub res: usize,
    pub channels: usize,
    pub width: usize,
    pub levels: usize,
    pub oa: bool,
    pub adapters: bool,
    pub text_dim: usize,
    pub d_k: usize,
    pub time_dim: usize,
    /// Defaults to `res / 2`.
    pub cross_line_index: Option<usize>,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub dataset_size: usize,
    pub train_steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// `full`, `backbone` or `adapters`.
    pub stage: String,
    /// Samples drawn by `sample` and `ablate`.
    pub samples: usize,
    /// Clamp predicted clean triplanes to `[clip_min, clip_max]` while
    /// sampling.
    pub clip: bool,
    pub clip_min: f64,
    pub clip_max: f64,
    /// Smallest relative drop in consistency error `ablate` accepts.
    pub min_relative_gain: f64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection {
            res: 8,
            channels: 2,
            width: 16,
            levels: 2,
            oa: true,
            adapters: false,
            text_dim: 16,
            d_k: 16,
            time_dim: 16,
            cross_line_index: None,
            timesteps: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
            dataset_size: 256,
            train_steps: 3000,
            batch: 8,
            lr: 2e-3,
            stage: "full".into(),
            samples: 64,
            clip: true,
            clip_min: 0.0,
            clip_max: 1.0,
            min_relative_gain: 0.25,
        }
    }
}

impl DiffusionSection {
    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            res: self.res,
            channels: self.channels,
            width: self.width,
            levels: self.levels,
            oa: self.oa,
            adapters: self.adapters,
            text_dim: self.text_dim,
            d_k: self.d_k,
            time_dim: self.time_dim,
            cross_line_index: self.cross_line_index.unwrap_or(self.res / 2),
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.timesteps, self.beta_start, self.beta_end).map_err(|e| Error::Config(format!("diffusion: {e}")))
    }

    pub fn train_config(&self, seed: u64) -> Result<DiffusionTrainConfig> {
        Ok(DiffusionTrainConfig {
            steps: self.train_steps,
            batch: self.batch,
            lr: self.lr,
            seed,
            stage: Stage::parse(&self.stage)?,
        })
    }

    pub fn clip_range(&self) -> Option<(f64, f64)> {
        self.clip.then_some((self.clip_min, self.clip_max))
    }
}

fn check(ok: bool, key: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("`{key}`: {msg}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Range checks that the type system does not cover.
    pub fn validate(&self) -> Result<()> {
        let r = &self.render;
        check(r.samples > 0, "render.samples", "must be positive")?;
        check(r.size > 0, "render.size", "must be positive")?;
        check(r.fov_deg > 0.0 && r.fov_deg < 180.0, "render.fov_deg", "must lie in (0, 180)")?;
        check(r.radius > crate::render::SCENE_RADIUS, "render.radius", "must clear the [-1, 1]^3 cube")?;
        let f = &self.fit;
        check(SceneKind::parse(&f.scene).is_ok(), "fit.scene", "expected vacuum, sphere, cube or two_blob")?;
        check(f.views >= 2, "fit.views", "need at least two")?;
        check(f.view_size > 0, "fit.view_size", "must be positive")?;
        check(f.oracle_samples > 0, "fit.oracle_samples", "must be positive")?;
        check(f.batch_rays > 0 && f.samples > 0, "fit.batch_rays", "batch and samples must be positive")?;
        check(f.res >= 2 && f.channels > 0, "fit.res", "need res >= 2 and channels >= 1")?;
        check(f.validate_every > 0 && f.validation_rays > 0, "fit.validate_every", "must be positive")?;
        check(f.lr_planes >= 0.0 && f.lr_heads >= 0.0, "fit.lr_planes", "learning rates must be non-negative")?;
        check(f.mask_weight >= 0.0 && f.depth_weight >= 0.0, "fit.mask_weight", "weights must be non-negative")?;
        let d = &self.diffusion;
        check(d.res >= 6, "diffusion.res", "toy boxes need res >= 6")?;
        check(d.channels > 0 && d.width > 0 && d.levels > 0, "diffusion.width", "sizes must be positive")?;
        check(d.cross_line_index.is_none_or(|i| i < d.res), "diffusion.cross_line_index", "must be below res")?;
        check(d.timesteps > 0, "diffusion.timesteps", "must be positive")?;
        check(d.dataset_size > 0 && d.batch > 0, "diffusion.dataset_size", "dataset and batch must be non-empty")?;
        check(d.samples > 0, "diffusion.samples", "must be positive")?;
        check(d.clip_min < d.clip_max, "diffusion.clip_min", "must be below clip_max")?;
        Stage::parse(&d.stage)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_override_fields() {
        let cfg = RunConfig::from_toml_str("seed = 3\n[fit]\niterations = 10\n[diffusion]\noa = false\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.fit.iterations, 10);
        assert!(!cfg.diffusion.oa);
        assert_eq!(cfg.fit.res, FitSection::default().res);
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let err = RunConfig::from_toml_str("seed = 1\n[fit]\niteratoins = 5\n").unwrap_err().to_string();
        assert!(err.contains("iteratoins"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn range_errors_name_the_key() {
        let err = RunConfig::from_toml_str("[render]\nradius = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("render.radius"), "{err}");
        let err = RunConfig::from_toml_str("[diffusion]\nstage = \"half\"\n").unwrap_err().to_string();
        assert!(err.contains("half"), "{err}");
    }

    #[test]
    fn training_views_avoid_canonical_azimuths() {
        let f = FitSection::default();
        for a in f.training_azimuths() {
            for h in &f.heldout_azimuths {
                assert!((a - h).abs() > 1.0);
            }
        }
    }
}
