//! Denoiser training with optional staged freezing.

use rand::Rng as _;

use crate::attention::TextEmbedding;
use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::train::{AdamW, AdamWConfig};
use crate::triplane::Triplane;

use super::denoiser::{Denoiser, ADAPTER_PREFIX, OA_PREFIX, TEXT_TABLE};
use super::objective::stack;
use super::schedule::NoiseSchedule;

/// Which parameters a run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Everything but the caption table.
    Full,
    /// The backbone only; orthogonal attention and adapters stay frozen,
    /// which keeps them exact identities.
    Backbone,
    /// Orthogonal attention and adapters only, backbone frozen.
    Adapters,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Stage::Full),
            "backbone" => Ok(Stage::Backbone),
            "adapters" => Ok(Stage::Adapters),
            _ => Err(Error::Config(format!("unknown stage `{s}` (full, backbone, adapters)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub stage: Stage,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        DiffusionTrainConfig {
            steps: 1000,
            batch: 8,
            lr: 2e-3,
            seed: 0,
            stage: Stage::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionTrainReport {
    /// Mean loss per example, one entry per completed step.
    pub losses: Vec<f64>,
    pub rejected_steps: u64,
    /// Step at which the loss stopped being finite; parameters were
    /// restored to the last finite snapshot.
    pub diverged_at: Option<usize>,
}

/// Applies `stage` to the frozen flags of `model`.
pub fn apply_stage(model: &mut Denoiser, stage: Stage) {
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.entry(id).name.clone();
        let extra = name.starts_with(OA_PREFIX) || name.starts_with(ADAPTER_PREFIX);
        let frozen = name == TEXT_TABLE
            || match stage {
                Stage::Full => false,
                Stage::Backbone => extra,
                Stage::Adapters => !extra,
            };
        model.store.set_frozen(id, frozen);
    }
}

/// Trains `model` in place on `(x0, caption)` pairs with uniformly drawn
/// steps and fresh noise per example.
///
/// The loss of each example is the all-planes form; a batch averages its
/// examples.
pub fn train_denoiser(
    model: &mut Denoiser,
    data: &[(Triplane, TextEmbedding)],
    sched: &NoiseSchedule,
    cfg: &DiffusionTrainConfig,
) -> Result<DiffusionTrainReport> {
    if data.is_empty() || cfg.batch == 0 {
        return Err(Error::invalid("train_denoiser", "need data and a positive batch size"));
    }
    for (x0, _) in data {
        if x0.res() != model.cfg.res || x0.channels() != model.cfg.channels {
            return Err(Error::shape(
                "train_denoiser",
                &[x0.res(), x0.channels()],
                &[model.cfg.res, model.cfg.channels],
            ));
        }
    }
    apply_stage(model, cfg.stage);
    let mut opt = AdamW::new(
        &model.store,
        AdamWConfig {
            lr: cfg.lr,
            ..AdamWConfig::default()
        },
    );
    let mut r = rng::seeded(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut snapshot: ParamStore = model.store.clone();
    let mut diverged_at = None;
    let n = model.rows();
    let c = model.cfg.channels;
    for step in 1..=cfg.steps {
        let picks: Vec<usize> = (0..cfg.batch).map(|_| r.random_range(0..data.len())).collect();
        let steps: Vec<usize> = (0..cfg.batch).map(|_| r.random_range(1..=sched.steps())).collect();
        let x0 = stack(&picks.iter().map(|&i| &data[i].0).collect::<Vec<_>>())?;
        let eps = rng::normal_tensor(&[cfg.batch * n, c], 1.0, &mut r);
        let mut xt = Vec::with_capacity(x0.len());
        for (b, &t) in steps.iter().enumerate() {
            let span = b * n * c..(b + 1) * n * c;
            xt.extend(sched.mix(t, &x0.data()[span.clone()], &eps.data()[span])?);
        }
        let text: Vec<TextEmbedding> = picks.iter().map(|&i| data[i].1.clone()).collect();
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let xv = g.constant(Tensor::new(&[cfg.batch * n, c], xt)?);
        let pred = model.forward(&mut g, &p, xv, &steps, &text)?;
        let ev = g.constant(eps);
        let diff = g.sub(pred, ev)?;
        let sq = g.square(diff);
        let mean = g.mean(sq);
        // per-plane means summed over three equal planes
        let loss = g.scale(mean, 3.0);
        let value = g.value(loss).item();
        if !value.is_finite() {
            diverged_at = Some(step);
            model.store = snapshot;
            break;
        }
        g.backward(loss)?;
        let grads = p.grads(&mut g);
        opt.step(&mut model.store, &grads)?;
        losses.push(value);
        if step % 100 == 0 {
            snapshot = model.store.clone();
        }
    }
    Ok(DiffusionTrainReport {
        losses,
        rejected_steps: opt.rejected(),
        diverged_at,
    })
}
