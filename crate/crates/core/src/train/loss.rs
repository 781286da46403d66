//! Composite render loss over color, mask and depth.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::render::RenderOutput;

/// Image-pair distance added to the loss with weight
/// [`LossWeights::perceptual`].
pub trait Perceptual: Send + Sync {
    fn name(&self) -> &'static str;

    /// `pred` and `target` are `[H * W, 3]` row-major images.
    fn graph(&self, g: &mut Graph, pred: Var, target: Var, width: usize, height: usize) -> Result<Var>;
}

/// Mean squared error between average-pooled images, a cheap stand-in for
/// a learned perceptual metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PooledMse {
    pub factor: usize,
}

impl Default for PooledMse {
    fn default() -> Self {
        PooledMse { factor: 4 }
    }
}

/// `[Hp * Wp, H * W]` averaging matrix; windows that run past the edge are
/// dropped, and an image smaller than one window pools to a single value.
fn pool_matrix(width: usize, height: usize, factor: usize) -> Tensor {
    let f = factor.max(1);
    let (fw, fh) = (f.min(width), f.min(height));
    let (pw, ph) = (width / fw, height / fh);
    let mut m = Tensor::zeros(&[pw * ph, width * height]);
    let inv = 1.0 / (fw * fh) as f64;
    for py in 0..ph {
        for px in 0..pw {
            let row = py * pw + px;
            for y in py * fh..(py + 1) * fh {
                for x in px * fw..(px + 1) * fw {
                    m.data_mut()[row * width * height + y * width + x] = inv;
                }
            }
        }
    }
    m
}

impl Perceptual for PooledMse {
    fn name(&self) -> &'static str {
        "pooled_mse"
    }

    fn graph(&self, g: &mut Graph, pred: Var, target: Var, width: usize, height: usize) -> Result<Var> {
        let pool = g.constant(pool_matrix(width, height, self.factor));
        let a = g.matmul(pool, pred)?;
        let b = g.matmul(pool, target)?;
        let d = g.sub(a, b)?;
        let d = g.square(d);
        Ok(g.mean(d))
    }
}

#[derive(Clone)]
pub struct LossWeights {
    pub mask: f64,
    pub depth: f64,
    pub perceptual: f64,
    pub perceptual_hook: Option<Arc<dyn Perceptual>>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mask: 0.5,
            depth: 1.0,
            perceptual: 2.0,
            perceptual_hook: None,
        }
    }
}

impl fmt::Debug for LossWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LossWeights")
            .field("mask", &self.mask)
            .field("depth", &self.depth)
            .field("perceptual", &self.perceptual)
            .field("perceptual_hook", &self.perceptual_hook.as_ref().map(|h| h.name()))
            .finish()
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.mask, self.depth, self.perceptual].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("loss_weights", "weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Loss of a batch of rays: `pred` is `[R, 5]` on the tape, `target` the
/// matching rows, `inv_range` holds `1 / (far - near)` per ray so depth
/// errors are measured relative to each camera's depth range.
pub fn ray_loss(g: &mut Graph, pred: Var, target: &Tensor, inv_range: &Tensor, w: &LossWeights) -> Result<Var> {
    let rows = target.shape().first().copied().unwrap_or(0);
    if g.shape(pred) != target.shape() || target.shape() != [rows, 5] || inv_range.shape() != [rows, 1] {
        return Err(Error::shape("render_loss", g.shape(pred), target.shape()));
    }
    w.validate()?;
    let t = g.constant(target.clone());
    let diff = g.sub(pred, t)?;
    let rgb = g.slice(diff, 1, 0, 3)?;
    let mask = g.slice(diff, 1, 3, 1)?;
    let depth = g.slice(diff, 1, 4, 1)?;
    let scale = g.constant(inv_range.clone());
    let depth = g.mul(depth, scale)?;
    let terms = [(rgb, 1.0), (mask, w.mask), (depth, w.depth)];
    let mut total = None;
    for (x, k) in terms {
        let sq = g.square(x);
        let m = g.mean(sq);
        let m = g.scale(m, k);
        total = Some(match total {
            None => m,
            Some(acc) => g.add(acc, m)?,
        });
    }
    Ok(total.expect("three terms"))
}

/// `[H * W, 5]` rows of a render plus the per-row inverse depth range.
pub fn render_rows(out: &RenderOutput) -> (Tensor, Tensor) {
    let n = out.pixels();
    let mut rows = Vec::with_capacity(5 * n);
    for i in 0..n {
        rows.extend_from_slice(&out.rgb[3 * i..3 * i + 3]);
        rows.push(out.mask[i]);
        rows.push(out.depth[i]);
    }
    let inv = 1.0 / (out.far - out.near);
    (Tensor::raw(vec![n, 5], rows), Tensor::full(&[n, 1], inv))
}

/// Loss of one full view on the tape, including the perceptual hook.
pub fn view_loss(g: &mut Graph, pred: Var, gt: &RenderOutput, w: &LossWeights) -> Result<Var> {
    let (target, inv) = render_rows(gt);
    let mut loss = ray_loss(g, pred, &target, &inv, w)?;
    if let Some(hook) = &w.perceptual_hook {
        let p = g.slice(pred, 1, 0, 3)?;
        let t = g.constant(Tensor::raw(vec![gt.pixels(), 3], gt.rgb.clone()));
        let d = hook.graph(g, p, t, gt.width, gt.height)?;
        let d = g.scale(d, w.perceptual);
        loss = g.add(loss, d)?;
    }
    Ok(loss)
}

/// Sum over views of image MSE plus weighted mask, depth and perceptual
/// terms. The perceptual term is absent when no hook is set.
pub fn render_loss(pred: &[RenderOutput], gt: &[RenderOutput], w: &LossWeights) -> Result<f64> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::shape("render_loss", &[pred.len()], &[gt.len()]));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(gt) {
        if p.width != t.width || p.height != t.height {
            return Err(Error::shape("render_loss", &[p.height, p.width], &[t.height, t.width]));
        }
        let mut g = Graph::new();
        let (rows, _) = render_rows(p);
        let pv = g.constant(rows);
        let l = view_loss(&mut g, pv, t, w)?;
        total += g.value(l).item();
    }
    Ok(total)
}
