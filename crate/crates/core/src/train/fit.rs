//! Fitting a triplane field and its heads to posed views.

use rand::Rng as _;

use super::loss::{ray_loss, LossWeights};
use super::optim::{AdamW, AdamWConfig};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::numerics::rng::{self, Rng};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor};
use crate::render::{
    generate_rays, render_rays, render_view, Camera, FieldHeads, HeadsConfig, Ray, RenderConfig, RenderOutput,
};
use crate::triplane::Triplane;

/// A triplane and its heads in one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedField {
    pub store: ParamStore,
    /// `[3 * D * D, C]` token layout of the triplane.
    pub planes: ParamId,
    pub heads: FieldHeads,
    pub res: usize,
}

impl FittedField {
    pub fn new(res: usize, channels: usize, init_std: f64, heads: &HeadsConfig, r: &mut Rng) -> Result<Self> {
        if res == 0 || channels == 0 {
            return Err(Error::invalid("fitted_field", "resolution and channels must be positive"));
        }
        let mut store = ParamStore::new();
        let planes = store.add("planes", rng::normal_tensor(&[3 * res * res, channels], init_std, r));
        let heads = FieldHeads::new(&mut store, "heads", channels, heads, r)?;
        Ok(FittedField {
            store,
            planes,
            heads,
            res,
        })
    }

    /// Builds from a triplane and existing head layers, registering the
    /// head weights under the usual names.
    pub fn from_parts(tri: &Triplane, density: (Vec<Tensor>, Vec<Tensor>), color: (Vec<Tensor>, Vec<Tensor>), frequencies: usize) -> Result<Self> {
        let mut store = ParamStore::new();
        let planes = store.add("planes", tri.to_tokens());
        let mut mlp = |name: &str, (ws, bs): (Vec<Tensor>, Vec<Tensor>)| -> Result<Mlp> {
            let layers = ws
                .into_iter()
                .zip(bs)
                .enumerate()
                .map(|(i, (w, b))| {
                    let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
                    crate::nn::Linear {
                        w: store.add(format!("heads.{name}.{i}.w"), w),
                        b: Some(store.add(format!("heads.{name}.{i}.b"), b)),
                        fan_in,
                        fan_out,
                    }
                })
                .collect::<Vec<_>>();
            if layers.is_empty() {
                return Err(Error::invalid("fitted_field", "head without layers"));
            }
            Ok(Mlp { layers })
        };
        let density = mlp("density", density)?;
        let color = mlp("color", color)?;
        let heads = FieldHeads::from_parts(density, color, frequencies, tri.channels())?;
        Ok(FittedField {
            store,
            planes,
            heads,
            res: tri.res(),
        })
    }

    pub fn channels(&self) -> usize {
        self.heads.channels
    }

    pub fn triplane(&self) -> Triplane {
        Triplane::from_tensor(self.res, self.store.get(self.planes)).expect("planes keep their shape")
    }

    pub fn render(&self, cam: &Camera, cfg: &RenderConfig) -> Result<RenderOutput> {
        render_view(&self.triplane(), &self.store, &self.heads, cam, cfg)
    }

    /// Mean density over `points`.
    pub fn mean_density(&self, points: &[[f64; 3]]) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let planes = g.constant(self.store.get(self.planes).clone());
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let pts = g.constant(Tensor::new(&[points.len(), 3], flat)?);
        let (s, _) = self.heads.forward(&mut g, &p, planes, self.res, pts)?;
        let m = g.mean(s);
        Ok(g.value(m).item())
    }

    /// Rounds every parameter to `f32`, the precision of checkpoints.
    pub fn round_to_f32(&mut self) {
        self.store.round_to_f32();
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub samples: usize,
    pub res: usize,
    pub channels: usize,
    pub lr_planes: f64,
    pub lr_heads: f64,
    pub init_std: f64,
    pub heads: HeadsConfig,
    pub weights: LossWeights,
    pub seed: u64,
    /// Steps between validation passes.
    pub validate_every: usize,
    pub validation_rays: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 3000,
            batch_rays: 512,
            samples: 48,
            res: 32,
            channels: 8,
            lr_planes: 5e-3,
            lr_heads: 5e-4,
            init_std: 0.1,
            heads: HeadsConfig::default(),
            weights: LossWeights::default(),
            seed: 0,
            validate_every: 100,
            validation_rays: 1024,
        }
    }
}

/// A posed training image.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub target: RenderOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitOutcome {
    Completed,
    /// The loss stopped being finite at `step`; the model is the last
    /// finite snapshot.
    Diverged { step: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Parameters with the lowest validation loss seen.
    pub model: FittedField,
    /// Training loss of every completed step.
    pub losses: Vec<f64>,
    /// `(step, loss)` of each validation pass.
    pub validation: Vec<(usize, f64)>,
    pub best_step: usize,
    pub rejected_steps: u64,
    pub outcome: FitOutcome,
}

struct RaySet {
    rays: Vec<Ray>,
    rows: Vec<f64>,
    inv_range: Vec<f64>,
}

impl RaySet {
    fn from_views(views: &[View]) -> Result<Self> {
        let mut set = RaySet {
            rays: Vec::new(),
            rows: Vec::new(),
            inv_range: Vec::new(),
        };
        for v in views {
            let t = &v.target;
            if t.width != v.camera.width || t.height != v.camera.height {
                return Err(Error::shape("fit_scene", &[t.height, t.width], &[v.camera.height, v.camera.width]));
            }
            set.rays.extend(generate_rays(&v.camera)?);
            for i in 0..t.pixels() {
                set.rows.extend_from_slice(&t.rgb[3 * i..3 * i + 3]);
                set.rows.push(t.mask[i]);
                set.rows.push(t.depth[i]);
                set.inv_range.push(1.0 / (t.far - t.near));
            }
        }
        Ok(set)
    }

    fn batch(&self, idx: &[usize]) -> (Vec<Ray>, Tensor, Tensor) {
        let rays = idx.iter().map(|&i| self.rays[i]).collect();
        let rows = idx.iter().flat_map(|&i| self.rows[5 * i..5 * i + 5].iter().copied()).collect();
        let inv = idx.iter().map(|&i| self.inv_range[i]).collect();
        (rays, Tensor::raw(vec![idx.len(), 5], rows), Tensor::raw(vec![idx.len(), 1], inv))
    }
}

/// Loss of `field` on a batch of rays; with `rng`, stratified sampling is
/// used and gradients are written to the tape.
fn batch_loss(
    g: &mut Graph,
    field: &FittedField,
    rays: &[Ray],
    target: &Tensor,
    inv: &Tensor,
    samples: usize,
    rng: Option<&mut Rng>,
    weights: &LossWeights,
) -> Result<crate::numerics::Var> {
    let p = field.store.bind(g);
    let planes = p.var(field.planes);
    let out = render_rays(g, &p, &field.heads, planes, field.res, rays, samples, rng, true)?;
    ray_loss(g, out, target, inv, weights)
}

/// Fits a fresh field to `views` by random ray batches.
///
/// Each step draws `batch_rays` pixels uniformly across all views, renders
/// them with stratified samples and applies one AdamW step. A fixed subset
/// of rays rendered with midpoint samples serves as the validation set.
/// The perceptual term needs whole images and is not used here.
pub fn fit_scene(views: &[View], cfg: &FitConfig) -> Result<FitResult> {
    if views.len() < 2 {
        return Err(Error::invalid("fit_scene", format!("need at least two views, got {}", views.len())));
    }
    if cfg.batch_rays == 0 || cfg.samples == 0 || cfg.validate_every == 0 {
        return Err(Error::invalid("fit_scene", "batch size, samples and validation interval must be positive"));
    }
    cfg.weights.validate()?;
    let set = RaySet::from_views(views)?;
    let mut r = rng::seeded(cfg.seed);
    let mut field = FittedField::new(cfg.res, cfg.channels, cfg.init_std, &cfg.heads, &mut r)?;
    let ids: Vec<_> = field.store.ids().collect();
    for id in ids {
        let lr = if id == field.planes { cfg.lr_planes } else { cfg.lr_heads };
        field.store.set_lr(id, lr);
    }
    let mut opt = AdamW::new(&field.store, AdamWConfig::default());

    let n_val = cfg.validation_rays.min(set.rays.len()).max(1);
    let mut vr = rng::seeded(cfg.seed ^ 0x5eed_0f_7a11d);
    let val_idx: Vec<usize> = (0..n_val).map(|_| vr.random_range(0..set.rays.len())).collect();
    let val = set.batch(&val_idx);
    let validate = |field: &FittedField| -> Result<f64> {
        let mut g = Graph::new();
        let l = batch_loss(&mut g, field, &val.0, &val.1, &val.2, cfg.samples, None, &cfg.weights)?;
        Ok(g.value(l).item())
    };

    let mut best = (validate(&field)?, 0usize, field.clone());
    let mut validation = vec![(0, best.0)];
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut last_finite = field.clone();
    let mut outcome = FitOutcome::Completed;
    let mut idx = vec![0usize; cfg.batch_rays];
    for step in 1..=cfg.iterations {
        for i in idx.iter_mut() {
            *i = r.random_range(0..set.rays.len());
        }
        let (rays, target, inv) = set.batch(&idx);
        let mut g = Graph::new();
        let p = field.store.bind(&mut g);
        let planes = p.var(field.planes);
        let out = render_rays(&mut g, &p, &field.heads, planes, field.res, &rays, cfg.samples, Some(&mut r), true)?;
        let loss = ray_loss(&mut g, out, &target, &inv, &cfg.weights)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            outcome = FitOutcome::Diverged {
                step,
                msg: format!("training loss became {value}"),
            };
            break;
        }
        g.backward(loss)?;
        let grads = p.grads(&mut g);
        losses.push(value);
        opt.step(&mut field.store, &grads)?;
        if step % cfg.validate_every == 0 || step == cfg.iterations {
            let v = validate(&field)?;
            validation.push((step, v));
            if !v.is_finite() {
                outcome = FitOutcome::Diverged {
                    step,
                    msg: format!("validation loss became {v}"),
                };
                break;
            }
            last_finite = field.clone();
            if v < best.0 {
                best = (v, step, field.clone());
            }
        }
    }
    if matches!(outcome, FitOutcome::Diverged { .. }) && best.1 == 0 {
        best.2 = last_finite;
    }
    Ok(FitResult {
        model: best.2,
        losses,
        validation,
        best_step: best.1,
        rejected_steps: opt.rejected(),
        outcome,
    })
}
