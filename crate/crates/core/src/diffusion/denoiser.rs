//! Noise-prediction network over triplane tokens.
//!
//! Every plane is processed by 3x3 convolutions that stay inside the plane,
//! with a learned per-plane embedding and a timestep embedding added in each
//! residual block. Each level then cross-attends to the caption tokens and,
//! when enabled, runs orthogonal attention across planes. Optional adapter
//! levels (a residual block and an in-plane attention block) start as exact
//! identities. Batches are stacked along the row axis.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::attention::{attend_with_table, oa_forward_tables, AttentionParams, AttentionSpec, KeyTable, OaLayout, TextEmbedding, TextEncoder};
use crate::error::{Error, Result};
use crate::nn::{Init, LayerNorm, Linear};
use crate::numerics::rng::{self, Rng};
use crate::numerics::{Bound, Graph, ParamId, ParamStore, Tensor, Var};

/// Name prefix of the orthogonal-attention parameters.
pub const OA_PREFIX: &str = "oa.";
/// Name prefix of the adapter parameters.
pub const ADAPTER_PREFIX: &str = "adapter.";
/// Name of the frozen caption embedding table.
pub const TEXT_TABLE: &str = "text.table";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub res: usize,
    pub channels: usize,
    pub width: usize,
    pub levels: usize,
    pub oa: bool,
    pub adapters: bool,
    pub text_dim: usize,
    pub d_k: usize,
    pub time_dim: usize,
    pub cross_line_index: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            res: 8,
            channels: 2,
            width: 16,
            levels: 2,
            oa: true,
            adapters: false,
            text_dim: 16,
            d_k: 16,
            time_dim: 16,
            cross_line_index: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Conv3 {
    lin: Linear,
}

impl Conv3 {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, init: Init, r: &mut Rng) -> Self {
        Conv3 {
            lin: Linear::new(store, name, 9 * cin, cout, true, init, r),
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var, index: &Rc<[Option<usize>]>) -> Result<Var> {
        let cin = self.lin.fan_in / 9;
        let rows = index.len() / 9;
        let patches = g.gather_rows(x, index.clone())?;
        let patches = g.reshape(patches, &[rows, 9 * cin])?;
        self.lin.forward(g, p, patches)
    }
}

fn silu(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.sigmoid(x);
    g.mul(x, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ResBlock {
    norm1: LayerNorm,
    conv1: Conv3,
    time: Linear,
    norm2: LayerNorm,
    conv2: Conv3,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, width: usize, zero_out: bool, r: &mut Rng) -> Self {
        let s2 = 2f64.sqrt();
        ResBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
            conv1: Conv3::new(store, &format!("{name}.conv1"), width, width, Init::Scaled(s2), r),
            time: Linear::new(store, &format!("{name}.time"), width, width, true, Init::Scaled(1.0), r),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
            conv2: Conv3::new(
                store,
                &format!("{name}.conv2"),
                width,
                width,
                if zero_out { Init::Zero } else { Init::Scaled(1.0) },
                r,
            ),
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var, temb: Var, ctx: &BatchIndex) -> Result<Var> {
        let h = self.norm1.forward(g, p, x)?;
        let h = silu(g, h)?;
        let h = self.conv1.forward(g, p, h, &ctx.conv)?;
        let t = self.time.forward(g, p, temb)?;
        let t = g.gather_rows(t, ctx.example.clone())?;
        let h = g.add(h, t)?;
        let h = self.norm2.forward(g, p, h)?;
        let h = silu(g, h)?;
        let h = self.conv2.forward(g, p, h, &ctx.conv)?;
        g.add(x, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Adapter {
    res: ResBlock,
    attn: AttentionParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Level {
    res: ResBlock,
    cross: AttentionParams,
    oa: Option<AttentionParams>,
    adapter: Option<Adapter>,
}

/// Row indices shared by every layer for one batch size.
struct BatchIndex {
    conv: Rc<[Option<usize>]>,
    example: Rc<[Option<usize>]>,
    plane: Rc<[Option<usize>]>,
    oa: [Rc<KeyTable>; 2],
    in_plane: Option<Rc<KeyTable>>,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    pub store: ParamStore,
    encoder: TextEncoder,
    conv_in: Conv3,
    plane_emb: ParamId,
    time1: Linear,
    time2: Linear,
    levels: Vec<Level>,
    norm_out: LayerNorm,
    conv_out: Conv3,
    layout: OaLayout,
    cache: RefCell<HashMap<usize, Rc<BatchIndex>>>,
}

impl std::fmt::Debug for BatchIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BatchIndex")
    }
}

impl Denoiser {
    /// Builds a fresh network. Backbone, text table, orthogonal attention
    /// and adapters draw from separate seeded streams, so switching the
    /// optional parts on or off leaves the other weights unchanged.
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        if cfg.res == 0 || cfg.channels == 0 || cfg.width == 0 || cfg.levels == 0 || cfg.time_dim < 2 {
            return Err(Error::invalid("denoiser", format!("bad configuration {cfg:?}")));
        }
        let layout = OaLayout::new(cfg.res, cfg.cross_line_index)?;
        let mut store = ParamStore::new();
        let mut r = rng::seeded(seed);
        let mut r_text = rng::seeded(seed ^ 0x7e47);
        let mut r_oa = rng::seeded(seed ^ 0x0a0a);
        let mut r_ad = rng::seeded(seed ^ 0xada9);
        let w = cfg.width;
        let encoder = TextEncoder::new(&mut store, "text", cfg.text_dim, &mut r_text);
        store.set_frozen(encoder.table, true);
        let conv_in = Conv3::new(&mut store, "conv_in", cfg.channels, w, Init::Scaled(1.0), &mut r);
        let plane_emb = store.add("plane_emb", rng::normal_tensor(&[3, w], 0.5, &mut r));
        let time1 = Linear::new(&mut store, "time.1", cfg.time_dim, w, true, Init::Scaled(1.0), &mut r);
        let time2 = Linear::new(&mut store, "time.2", w, w, true, Init::Scaled(1.0), &mut r);
        let mut levels = Vec::with_capacity(cfg.levels);
        for i in 0..cfg.levels {
            let res = ResBlock::new(&mut store, &format!("level{i}.res"), w, false, &mut r);
            let cross_spec = AttentionSpec {
                norm: true,
                zero_out: false,
                ..AttentionSpec::new(w, cfg.text_dim, cfg.d_k)
            };
            let cross = AttentionParams::new(&mut store, &format!("level{i}.cross"), cross_spec, &mut r)?;
            let oa_spec = AttentionSpec {
                norm: true,
                ..AttentionSpec::new(w, w, cfg.d_k)
            };
            let oa = if cfg.oa {
                Some(AttentionParams::new(&mut store, &format!("{OA_PREFIX}level{i}"), oa_spec, &mut r_oa)?)
            } else {
                None
            };
            let adapter = if cfg.adapters {
                let name = format!("{ADAPTER_PREFIX}level{i}");
                Some(Adapter {
                    res: ResBlock::new(&mut store, &format!("{name}.res"), w, true, &mut r_ad),
                    attn: AttentionParams::new(&mut store, &format!("{name}.attn"), oa_spec, &mut r_ad)?,
                })
            } else {
                None
            };
            levels.push(Level { res, cross, oa, adapter });
        }
        let norm_out = LayerNorm::new(&mut store, "norm_out", w);
        let conv_out = Conv3::new(&mut store, "conv_out", w, cfg.channels, Init::Zero, &mut r);
        Ok(Denoiser {
            cfg,
            store,
            encoder,
            conv_in,
            plane_emb,
            time1,
            time2,
            levels,
            norm_out,
            conv_out,
            layout,
            cache: RefCell::new(HashMap::new()),
        })
    }

    /// Rows of one triplane, `3 * D * D`.
    pub fn rows(&self) -> usize {
        3 * self.cfg.res * self.cfg.res
    }

    /// Caption embedding from the frozen token table.
    pub fn embed(&self, tokens: &[usize]) -> Result<TextEmbedding> {
        self.encoder.embed(&self.store, tokens)
    }

    fn batch_index(&self, batch: usize) -> Rc<BatchIndex> {
        if let Some(ix) = self.cache.borrow().get(&batch) {
            return ix.clone();
        }
        let d = self.cfg.res;
        let n = self.rows();
        let mut conv = Vec::with_capacity(9 * batch * n);
        for b in 0..batch {
            for plane in 0..3 {
                for v in 0..d {
                    for u in 0..d {
                        for dv in [-1isize, 0, 1] {
                            for du in [-1isize, 0, 1] {
                                let (uu, vv) = (u as isize + du, v as isize + dv);
                                let inside = uu >= 0 && vv >= 0 && uu < d as isize && vv < d as isize;
                                conv.push(inside.then(|| b * n + (plane * d + vv as usize) * d + uu as usize));
                            }
                        }
                    }
                }
            }
        }
        let example: Rc<[Option<usize>]> = (0..batch * n).map(|r| Some(r / n)).collect();
        let plane: Rc<[Option<usize>]> = (0..batch * n).map(|r| Some((r % n) / (d * d))).collect();
        let stack = |t: &KeyTable| {
            Rc::new(KeyTable::from_lists(
                (0..batch).flat_map(|b| (0..n).map(move |q| (b, q))).map(|(b, q)| t.keys_of(q).iter().map(move |k| k + b * n)),
            ))
        };
        let tables = self.layout.tables();
        let oa = [stack(&tables[0]), stack(&tables[1])];
        let in_plane = self.cfg.adapters.then(|| {
            Rc::new(KeyTable::from_lists((0..batch * n).map(|r| {
                let start = r / (d * d) * (d * d);
                start..start + d * d
            })))
        });
        let ix = Rc::new(BatchIndex {
            conv: conv.into(),
            example,
            plane,
            oa,
            in_plane,
        });
        self.cache.borrow_mut().insert(batch, ix.clone());
        ix
    }

    fn time_features(&self, steps: &[usize]) -> Tensor {
        let half = self.cfg.time_dim / 2;
        let dim = self.cfg.time_dim;
        Tensor::from_fn(&[steps.len(), dim], |i| {
            let (b, k) = (i / dim, i % dim);
            let f = (-(10_000f64.ln()) * (k % half) as f64 / half as f64).exp();
            let a = steps[b] as f64 * f;
            if k < half {
                a.sin()
            } else {
                a.cos()
            }
        })
    }

    /// Predicted noise for a stack of `B` noisy triplanes `x` (`[B * 3D^2, C]`)
    /// at `steps`, conditioned on one caption each.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, steps: &[usize], text: &[TextEmbedding]) -> Result<Var> {
        let batch = steps.len();
        let n = self.rows();
        if batch == 0 || text.len() != batch || g.shape(x) != [batch * n, self.cfg.channels] {
            return Err(Error::shape("denoiser", g.shape(x), &[batch * n, self.cfg.channels]));
        }
        let ix = self.batch_index(batch);
        let mut lists = Vec::with_capacity(batch * n);
        let mut offset = 0;
        let mut rows = Vec::new();
        for t in text {
            if t.d_model() != self.cfg.text_dim || t.is_empty() {
                return Err(Error::shape("denoiser", t.tensor().shape(), &[t.len(), self.cfg.text_dim]));
            }
            for _ in 0..n {
                lists.push(offset..offset + t.len());
            }
            offset += t.len();
            rows.extend_from_slice(t.tensor().data());
        }
        let text_table = Rc::new(KeyTable::from_lists(lists));
        let tokens = g.constant(Tensor::new(&[offset, self.cfg.text_dim], rows)?);

        let tf = g.constant(self.time_features(steps));
        let temb = self.time1.forward(g, p, tf)?;
        let temb = silu(g, temb)?;
        let temb = self.time2.forward(g, p, temb)?;

        let mut h = self.conv_in.forward(g, p, x, &ix.conv)?;
        let pe = g.gather_rows(p.var(self.plane_emb), ix.plane.clone())?;
        h = g.add(h, pe)?;
        for level in &self.levels {
            h = level.res.forward(g, p, h, temb, &ix)?;
            h = attend_with_table(g, p, &level.cross, h, tokens, &text_table)?;
            if let Some(oa) = &level.oa {
                h = oa_forward_tables(g, p, oa, &ix.oa, h)?;
            }
            if let Some(ad) = &level.adapter {
                h = ad.res.forward(g, p, h, temb, &ix)?;
                let table = ix.in_plane.as_ref().expect("adapter tables exist when adapters do");
                h = attend_with_table(g, p, &ad.attn, h, h, table)?;
            }
        }
        let h = self.norm_out.forward(g, p, h)?;
        let h = silu(g, h)?;
        self.conv_out.forward(g, p, h, &ix.conv)
    }

    /// Inference-only prediction for stacked triplanes.
    pub fn predict(&self, x: &Tensor, steps: &[usize], text: &[TextEmbedding]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv, steps, text)?;
        Ok(g.value(y).clone())
    }

    /// Ids of parameters whose names start with `prefix`.
    pub fn group(&self, prefix: &str) -> Vec<ParamId> {
        self.store.ids().filter(|&id| self.store.entry(id).name.starts_with(prefix)).collect()
    }

    /// Ids of the backbone: everything except orthogonal attention,
    /// adapters and the caption table.
    pub fn backbone(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| {
                let n = &self.store.entry(id).name;
                !n.starts_with(OA_PREFIX) && !n.starts_with(ADAPTER_PREFIX) && n != TEXT_TABLE
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn tiny(oa: bool, adapters: bool) -> DenoiserConfig {
        DenoiserConfig {
            res: 3,
            channels: 2,
            width: 4,
            levels: 1,
            oa,
            adapters,
            text_dim: 3,
            d_k: 4,
            time_dim: 4,
            cross_line_index: 1,
        }
    }

    fn perturb(store: &mut ParamStore, seed: u64) {
        let mut r = rng::seeded(seed);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let noise = rng::normal_tensor(store.get(id).shape(), 0.2, &mut r);
            for (a, b) in store.get_mut(id).data_mut().iter_mut().zip(noise.data()) {
                *a += b;
            }
        }
    }

    #[test]
    fn optional_parts_are_identities_at_init() {
        let base = Denoiser::new(tiny(false, false), 5).unwrap();
        let full = Denoiser::new(tiny(true, true), 5).unwrap();
        let mut r = rng::seeded(1);
        let x = rng::normal_tensor(&[2 * 27, 2], 1.0, &mut r);
        let text = vec![base.embed(&[1, 5]).unwrap(), base.embed(&[3]).unwrap()];
        // make the output layer non-zero in both so the comparison is informative
        let mut base = base;
        let mut full = full;
        for d in [&mut base, &mut full] {
            let id = d.store.find("conv_out.w").unwrap();
            let t = rng::normal_tensor(d.store.get(id).shape(), 1.0, &mut rng::seeded(2));
            *d.store.get_mut(id) = t;
        }
        let a = base.predict(&x, &[3, 40], &text).unwrap();
        let b = full.predict(&x, &[3, 40], &text).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut d = Denoiser::new(tiny(true, true), 6).unwrap();
        perturb(&mut d.store, 3);
        let mut r = rng::seeded(4);
        let x = rng::normal_tensor(&[2 * 27, 2], 1.0, &mut r);
        let text = vec![d.embed(&[2, 7]).unwrap(), d.embed(&[9, 1, 4]).unwrap()];
        let both = d.predict(&x, &[5, 60], &text).unwrap();
        let second = Tensor::new(&[27, 2], x.data()[54..].to_vec()).unwrap();
        let alone = d.predict(&second, &[60], &text[1..]).unwrap();
        let diff = both.data()[54..].iter().zip(alone.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn input_gradient() {
        let mut d = Denoiser::new(tiny(true, true), 7).unwrap();
        perturb(&mut d.store, 8);
        let text = vec![d.embed(&[0, 4]).unwrap()];
        let x = rng::normal_tensor(&[27, 2], 1.0, &mut rng::seeded(9));
        let w = rng::normal_tensor(&[27, 2], 1.0, &mut rng::seeded(10));
        let err = grad_check(
            |g: &mut Graph, xv: Var| {
                let p = d.store.bind(g);
                let y = d.forward(g, &p, xv, &[17], &text)?;
                let wv = g.constant(w.clone());
                let y = g.mul(y, wv)?;
                Ok(g.sum(y))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
