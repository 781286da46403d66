//! Finite-difference gradient suite over every differentiable op and the
//! composed attention and rendering paths.

use std::rc::Rc;
use std::sync::Arc;

use crate::attention::{
    cross_attention_forward, indexed_attention, oa_forward, AttentionParams, AttentionSpec, KeyTable, OaLayout,
    Refiner,
};
use crate::error::{Error, Result};
use crate::numerics::rng::{self, Rng};
use crate::numerics::{grad_check_detailed, Graph, ParamStore, Tensor, Var};
use crate::render::{generate_rays, render_rays, volume_integrate, Camera, FieldHeads, HeadsConfig, RenderOutput};
use crate::train::{ray_loss, view_loss, LossWeights, PooledMse};
use crate::triplane::sample_features;

/// Threshold for single ops.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
/// Threshold for composed paths.
pub const COMPOSED_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    Numerics,
    Attention,
    Renderer,
}

impl Scope {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Scope::All),
            "numerics" => Ok(Scope::Numerics),
            "attention" => Ok(Scope::Attention),
            "renderer" => Ok(Scope::Renderer),
            _ => Err(Error::Config(format!("unknown scope `{s}` (all, numerics, attention, renderer)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Numerics => "numerics",
            Scope::Attention => "attention",
            Scope::Renderer => "renderer",
        }
    }

    fn includes(self, other: Scope) -> bool {
        self == Scope::All || self == other
    }
}

/// One line of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub scope: Scope,
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

type Build = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

struct Case {
    scope: Scope,
    name: String,
    tolerance: f64,
    eps: f64,
    input: Tensor,
    build: Build,
}

fn weighted(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let wv = g.constant(w.clone());
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

/// Positive values of at least `gap`.
fn off_zero(shape: &[usize], gap: f64, r: &mut Rng) -> Tensor {
    rng::uniform_tensor(shape, gap, 1.5, r)
}

/// Values of either sign at least 0.1 away from zero, off the relu kink.
fn signed_off_zero(shape: &[usize], r: &mut Rng) -> Tensor {
    let mag = rng::uniform_tensor(shape, 0.1, 1.5, r);
    let sign = rng::uniform_tensor(shape, -1.0, 1.0, r);
    let data = mag.data().iter().zip(sign.data()).map(|(m, s)| if *s < 0.0 { -m } else { *m }).collect();
    Tensor::new(shape, data).expect("same shape")
}

fn primitive(name: &str, input: Tensor, build: impl Fn(&mut Graph, Var) -> Result<Var> + 'static) -> Case {
    Case {
        scope: Scope::Numerics,
        name: name.to_string(),
        tolerance: PRIMITIVE_TOLERANCE,
        eps: 1e-6,
        input,
        build: Box::new(build),
    }
}

fn primitive_cases(r: &mut Rng) -> Vec<Case> {
    let x34 = rng::normal_tensor(&[3, 4], 1.0, r);
    let k34 = rng::normal_tensor(&[3, 4], 1.0, r);
    let w34 = rng::normal_tensor(&[3, 4], 1.0, r);
    let mut cases = Vec::new();

    macro_rules! binary {
        ($name:expr, $op:ident, $swap:expr) => {{
            let (k, w) = (k34.clone(), w34.clone());
            cases.push(primitive($name, x34.clone(), move |g, x| {
                let kv = g.constant(k.clone());
                let y = if $swap { g.$op(kv, x)? } else { g.$op(x, kv)? };
                weighted(g, y, &w)
            }));
        }};
    }
    binary!("add", add, false);
    binary!("sub", sub, true);
    binary!("mul", mul, false);

    macro_rules! unary {
        ($name:expr, $input:expr, |$g:ident, $x:ident| $body:expr) => {{
            let w = w34.clone();
            cases.push(primitive($name, $input, move |$g, $x| {
                let y = $body;
                weighted($g, y, &w)
            }));
        }};
    }
    unary!("scale", x34.clone(), |g, x| g.scale(x, -1.7));
    unary!("add_scalar", x34.clone(), |g, x| g.add_scalar(x, 0.3));
    unary!("exp", x34.clone(), |g, x| g.exp(x));
    unary!("log", off_zero(&[3, 4], 0.2, r), |g, x| g.log(x));
    unary!("softplus", x34.clone(), |g, x| g.softplus(x));
    unary!("sigmoid", x34.clone(), |g, x| g.sigmoid(x));
    unary!("relu", signed_off_zero(&[3, 4], r), |g, x| g.relu(x));
    unary!("tanh", x34.clone(), |g, x| g.tanh(x));
    unary!("sin", x34.clone(), |g, x| g.sin(x));
    unary!("cos", x34.clone(), |g, x| g.cos(x));
    unary!("square", x34.clone(), |g, x| g.square(x));

    {
        let (bias, w) = (rng::normal_tensor(&[4], 1.0, r), w34.clone());
        cases.push(primitive("add_row.input", x34.clone(), move |g, x| {
            let b = g.constant(bias.clone());
            let y = g.add_row(x, b)?;
            weighted(g, y, &w)
        }));
        let (m, w) = (x34.clone(), w34.clone());
        cases.push(primitive("add_row.bias", rng::normal_tensor(&[4], 1.0, r), move |g, b| {
            let mv = g.constant(m.clone());
            let y = g.add_row(mv, b)?;
            weighted(g, y, &w)
        }));
    }
    {
        let right = rng::normal_tensor(&[4, 2], 1.0, r);
        let w32 = rng::normal_tensor(&[3, 2], 1.0, r);
        let (rt, w) = (right.clone(), w32.clone());
        cases.push(primitive("matmul.left", x34.clone(), move |g, x| {
            let b = g.constant(rt.clone());
            let y = g.matmul(x, b)?;
            weighted(g, y, &w)
        }));
        let (left, w) = (x34.clone(), w32);
        cases.push(primitive("matmul.right", right, move |g, x| {
            let a = g.constant(left.clone());
            let y = g.matmul(a, x)?;
            weighted(g, y, &w)
        }));
    }
    for axis in 0..2 {
        let k = k34.clone();
        let w = rng::normal_tensor(if axis == 0 { &[6, 4] } else { &[3, 8] }, 1.0, r);
        cases.push(primitive(&format!("concat.axis{axis}"), x34.clone(), move |g, x| {
            let kv = g.constant(k.clone());
            let y = g.concat(&[kv, x], axis)?;
            weighted(g, y, &w)
        }));
    }
    {
        let gamma = rng::uniform_tensor(&[4], 0.5, 1.5, r);
        let beta = rng::normal_tensor(&[4], 1.0, r);
        let w = w34.clone();
        cases.push(primitive("layer_norm", x34.clone(), move |g, x| {
            let (gv, bv) = (g.constant(gamma.clone()), g.constant(beta.clone()));
            let y = g.layer_norm(x, gv, bv)?;
            weighted(g, y, &w)
        }));
    }
    for axis in 0..2 {
        let w = w34.clone();
        cases.push(primitive(&format!("softmax.axis{axis}"), x34.clone(), move |g, x| {
            let y = g.softmax(x, axis)?;
            weighted(g, y, &w)
        }));
    }
    {
        let w = w34.clone();
        cases.push(primitive("sum", x34.clone(), move |g, x| {
            let sq = g.square(x);
            let a = g.sum(sq);
            let b = weighted(g, x, &w)?;
            g.mul(a, b)
        }));
        let w = w34.clone();
        cases.push(primitive("mean", x34.clone(), move |g, x| {
            let sq = g.square(x);
            let a = g.mean(sq);
            let b = weighted(g, x, &w)?;
            g.mul(a, b)
        }));
    }
    {
        let w = rng::normal_tensor(&[3, 2], 1.0, r);
        cases.push(primitive("slice", x34.clone(), move |g, x| {
            let y = g.slice(x, 1, 1, 2)?;
            weighted(g, y, &w)
        }));
        let index: Rc<[Option<usize>]> = vec![Some(2), None, Some(0), Some(2)].into();
        let w = rng::normal_tensor(&[4, 4], 1.0, r);
        cases.push(primitive("gather_rows", x34.clone(), move |g, x| {
            let y = g.gather_rows(x, index.clone())?;
            weighted(g, y, &w)
        }));
        let w = rng::normal_tensor(&[2, 6], 1.0, r);
        cases.push(primitive("reshape", x34.clone(), move |g, x| {
            let y = g.reshape(x, &[2, 6])?;
            weighted(g, y, &w)
        }));
    }
    cases
}

/// Points whose texel coordinates sit between 0.2 and 0.8 of a cell, away
/// from the bilinear seams.
fn cell_interior_points(n: usize, res: usize, r: &mut Rng) -> Tensor {
    let cells = rng::uniform_tensor(&[n, 3], 0.0, (res - 1) as f64, r);
    let fracs = rng::uniform_tensor(&[n, 3], 0.2, 0.8, r);
    let data = cells
        .data()
        .iter()
        .zip(fracs.data())
        .map(|(c, f)| (c.floor() + f) / (res - 1) as f64 * 2.0 - 1.0)
        .collect();
    Tensor::new(&[n, 3], data).expect("same shape")
}

fn perturbed(store: &mut ParamStore, scale: f64, r: &mut Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let noise = rng::normal_tensor(store.get(id).shape(), scale, r);
        for (a, b) in store.get_mut(id).data_mut().iter_mut().zip(noise.data()) {
            *a += b;
        }
    }
}

fn composed(scope: Scope, name: &str, eps: f64, input: Tensor, build: impl Fn(&mut Graph, Var) -> Result<Var> + 'static) -> Case {
    Case {
        scope,
        name: name.to_string(),
        tolerance: COMPOSED_TOLERANCE,
        eps,
        input,
        build: Box::new(build),
    }
}

fn sampling_cases(r: &mut Rng) -> Vec<Case> {
    let res = 4;
    let planes = rng::normal_tensor(&[3 * res * res, 2], 1.0, r);
    let pts = cell_interior_points(5, res, r);
    let w = rng::normal_tensor(&[5, 6], 1.0, r);
    let (p2, w2) = (pts.clone(), w.clone());
    let planes2 = planes.clone();
    vec![
        composed(Scope::Numerics, "triplane_sample.planes", 1e-6, planes, move |g, x| {
            let pv = g.constant(p2.clone());
            let f = sample_features(g, x, pv, res)?;
            weighted(g, f, &w2)
        }),
        composed(Scope::Numerics, "triplane_sample.points", 1e-6, pts, move |g, x| {
            let pl = g.constant(planes2.clone());
            let f = sample_features(g, pl, x, res)?;
            weighted(g, f, &w)
        }),
    ]
}

fn attention_cases(r: &mut Rng) -> Result<Vec<Case>> {
    let mut cases = Vec::new();

    let q = rng::normal_tensor(&[3, 4], 1.0, r);
    let k = rng::normal_tensor(&[5, 4], 1.0, r);
    let v = rng::normal_tensor(&[5, 2], 1.0, r);
    let w = rng::normal_tensor(&[3, 2], 1.0, r);
    let table = Rc::new(KeyTable::from_lists(vec![vec![0, 2, 4], vec![1], vec![3, 0, 1, 2]]));
    for (which, name) in ["query", "key", "value"].into_iter().enumerate() {
        let (qt, kt, vt, wt, tb) = (q.clone(), k.clone(), v.clone(), w.clone(), table.clone());
        let input = [&q, &k, &v][which].clone();
        cases.push(Case {
            scope: Scope::Attention,
            name: format!("indexed_attention.{name}"),
            tolerance: PRIMITIVE_TOLERANCE,
            eps: 1e-6,
            input,
            build: Box::new(move |g, x| {
                let mut vars = [qt.clone(), kt.clone(), vt.clone()].map(|t| g.constant(t));
                vars[which] = x;
                let o = indexed_attention(g, vars[0], vars[1], vars[2], tb.clone())?;
                weighted(g, o, &wt)
            }),
        });
    }

    let (res, c) = (3, 2);
    let n = 3 * res * res;
    let mut store = ParamStore::new();
    let spec = AttentionSpec {
        norm: true,
        ..AttentionSpec::new(c, c, 4)
    };
    let oa = AttentionParams::new(&mut store, "oa", spec, r)?;
    let cross = AttentionParams::new(&mut store, "cross", AttentionSpec { kv_dim: 3, ..spec }, r)?;
    let refiner = Refiner::new(&mut store, "refine", res, c, 3, 2, r)?;
    perturbed(&mut store, 0.3, r);
    let store = Rc::new(store);
    let layout = Rc::new(OaLayout::with_default_cross_line(res)?);
    let x0 = rng::normal_tensor(&[n, c], 1.0, r);
    let text = rng::normal_tensor(&[2, 3], 1.0, r);
    let w = rng::normal_tensor(&[n, c], 1.0, r);

    {
        let (s, l, w) = (store.clone(), layout.clone(), w.clone());
        cases.push(composed(Scope::Attention, "orthogonal_attention", 1e-5, x0.clone(), move |g, x| {
            let p = s.bind(g);
            let y = oa_forward(g, &p, &oa, &l, x)?;
            weighted(g, y, &w)
        }));
    }
    {
        let w_text = w.clone();
        let (s, t, w) = (store.clone(), text.clone(), w.clone());
        cases.push(composed(Scope::Attention, "cross_attention.tokens", 1e-5, x0.clone(), move |g, x| {
            let p = s.bind(g);
            let tv = g.constant(t.clone());
            let y = cross_attention_forward(g, &p, &cross, x, tv)?;
            weighted(g, y, &w)
        }));
        let (s, xt, w) = (store.clone(), x0.clone(), w_text);
        cases.push(composed(Scope::Attention, "cross_attention.text", 1e-5, text.clone(), move |g, t| {
            let p = s.bind(g);
            let xv = g.constant(xt.clone());
            let y = cross_attention_forward(g, &p, &cross, xv, t)?;
            weighted(g, y, &w)
        }));
    }
    {
        let (s, t) = (store.clone(), text.clone());
        cases.push(composed(Scope::Attention, "transformer_refine", 1e-5, x0, move |g, x| {
            let p = s.bind(g);
            let tv = g.constant(t.clone());
            let y = refiner.forward(g, &p, x, tv)?;
            weighted(g, y, &w)
        }));
    }
    Ok(cases)
}

fn renderer_cases(r: &mut Rng) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    let (res, c) = (4, 2);
    let mut store = ParamStore::new();
    let heads_cfg = HeadsConfig {
        hidden: 8,
        frequencies: 2,
        ..HeadsConfig::default()
    };
    let heads = FieldHeads::new(&mut store, "heads", c, &heads_cfg, r)?;
    let store = Rc::new(store);
    let heads = Rc::new(heads);
    let planes = rng::normal_tensor(&[3 * res * res, c], 1.0, r);
    {
        let pts = cell_interior_points(4, res, r);
        let (s, h) = (store.clone(), heads.clone());
        let w = rng::normal_tensor(&[4, 4], 1.0, r);
        cases.push(composed(Scope::Renderer, "field_eval", 1e-6, planes.clone(), move |g, x| {
            let p = s.bind(g);
            let pv = g.constant(pts.clone());
            let (sigma, color) = h.forward(g, &p, x, res, pv)?;
            let y = g.concat(&[sigma, color], 1)?;
            weighted(g, y, &w)
        }));
    }
    {
        let n = 6;
        let sigma = rng::uniform_tensor(&[2 * n, 1], 0.1, 2.0, r);
        let color = rng::uniform_tensor(&[2 * n, 3], 0.0, 1.0, r);
        let w = rng::normal_tensor(&[2, 5], 1.0, r);
        let ts: Rc<[f64]> = (0..2 * n).map(|i| 0.3 + (i % n) as f64 * 0.2 + 0.01 * i as f64).collect();
        let fars: Rc<[f64]> = vec![1.6, 1.8].into();
        let (c2, w2, ts2, f2) = (color.clone(), w.clone(), ts.clone(), fars.clone());
        cases.push(composed(Scope::Renderer, "integrate_ray.density", 1e-6, sigma.clone(), move |g, x| {
            let cv = g.constant(c2.clone());
            let o = volume_integrate(g, x, cv, ts2.clone(), f2.clone(), n)?;
            weighted(g, o, &w2)
        }));
        cases.push(composed(Scope::Renderer, "integrate_ray.color", 1e-6, color, move |g, x| {
            let sv = g.constant(sigma.clone());
            let o = volume_integrate(g, sv, x, ts.clone(), fars.clone(), n)?;
            weighted(g, o, &w)
        }));
    }
    {
        let cam = Camera::orbit(33.0, 21.0, 2.5, 0.9, 3, 3)?;
        let rays = generate_rays(&cam)?;
        let (s, h) = (store.clone(), heads.clone());
        let w = rng::normal_tensor(&[rays.len(), 5], 1.0, r);
        cases.push(composed(Scope::Renderer, "render_rays", 1e-6, planes, move |g, x| {
            let p = s.bind(g);
            let o = render_rays(g, &p, &h, x, res, &rays, 8, None, true)?;
            weighted(g, o, &w)
        }));
    }
    {
        let (wd, ht) = (4, 4);
        let px = wd * ht;
        let rows = rng::uniform_tensor(&[px, 5], 0.0, 1.0, r);
        let gt = RenderOutput::from_rows(wd, ht, rng::uniform_tensor(&[px * 5], 0.0, 1.0, r).data(), 0.2, 1.4)?;
        let weights = LossWeights {
            perceptual_hook: Some(Arc::new(PooledMse { factor: 2 })),
            ..LossWeights::default()
        };
        let (gt2, w2) = (gt.clone(), weights.clone());
        cases.push(composed(Scope::Renderer, "render_loss.view", 1e-6, rows.clone(), move |g, x| {
            view_loss(g, x, &gt2, &w2)
        }));
        let target = rng::uniform_tensor(&[px, 5], 0.0, 1.0, r);
        let inv = Tensor::full(&[px, 1], 1.0 / 1.2);
        cases.push(composed(Scope::Renderer, "render_loss.rays", 1e-6, rows, move |g, x| {
            ray_loss(g, x, &target, &inv, &weights)
        }));
    }
    Ok(cases)
}

/// Runs every check in `scope`. With `fault`, the adjoint of the op with
/// that name is corrupted in each analytic pass.
pub fn gradient_suite(scope: Scope, seed: u64, fault: Option<&'static str>) -> Result<Vec<CheckRow>> {
    let mut r = rng::seeded(seed);
    let mut cases = Vec::new();
    if scope.includes(Scope::Numerics) {
        cases.extend(primitive_cases(&mut r));
        cases.extend(sampling_cases(&mut r));
    }
    if scope.includes(Scope::Attention) {
        cases.extend(attention_cases(&mut r)?);
    }
    if scope.includes(Scope::Renderer) {
        cases.extend(renderer_cases(&mut r)?);
    }
    cases
        .into_iter()
        .map(|c| {
            let res = grad_check_detailed(&c.build, &c.input, c.eps, fault)?;
            Ok(CheckRow {
                scope: c.scope,
                name: c.name,
                max_rel_error: res.max_rel_error,
                tolerance: c.tolerance,
            })
        })
        .collect()
}
