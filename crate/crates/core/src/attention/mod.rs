//! Attention layers over triplane tokens.
//!
//! Triplanes enter as `[3 * D * D, C]` token matrices (see
//! [`Triplane::to_tokens`](crate::triplane::Triplane::to_tokens)). Every layer
//! adds its output to its input, and output projections start at zero so a
//! freshly built layer is an exact identity.

mod cross;
mod orthogonal;
mod refine;
mod sdpa;
mod text;

pub use cross::{cross_attention, cross_attention_forward};
pub use orthogonal::{default_cross_line, oa_forward, oa_key_set, orthogonal_attention, OaKeySet, OaLayout};
pub use refine::{transformer_refine, RefineBlock, Refiner};
pub use sdpa::{indexed_attention, KeyTable};
pub(crate) use cross::attend_with_table;
pub(crate) use orthogonal::oa_forward_tables;
pub use text::{tokenize, TextEmbedding, TextEncoder, MAX_TOKENS, VOCABULARY};

use crate::error::{Error, Result};
use crate::nn::{Init, LayerNorm, Linear};
use crate::numerics::{rng, Bound, Graph, ParamId, ParamStore, Var};

/// Dimensions and initialization of one attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionSpec {
    /// Width of the query tokens (and of the residual stream).
    pub query_dim: usize,
    /// Width of the key/value tokens.
    pub kv_dim: usize,
    pub d_k: usize,
    pub heads: usize,
    /// Pre-normalize the query-side input.
    pub norm: bool,
    /// Start the output projection at zero.
    pub zero_out: bool,
}

impl AttentionSpec {
    pub fn new(query_dim: usize, kv_dim: usize, d_k: usize) -> Self {
        AttentionSpec {
            query_dim,
            kv_dim,
            d_k,
            heads: 1,
            norm: false,
            zero_out: true,
        }
    }
}

/// Learned maps of one attention layer: `W_Q`, `W_K`, `W_V` into `d_k`
/// and `W_O` back to the query width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub norm: Option<LayerNorm>,
    pub heads: usize,
    pub query_dim: usize,
    pub kv_dim: usize,
    pub d_k: usize,
}

impl AttentionParams {
    pub fn new(store: &mut ParamStore, name: &str, spec: AttentionSpec, r: &mut rng::Rng) -> Result<Self> {
        let AttentionSpec {
            query_dim,
            kv_dim,
            d_k,
            heads,
            ..
        } = spec;
        if query_dim == 0 || kv_dim == 0 || d_k == 0 || heads == 0 || d_k % heads != 0 {
            return Err(Error::invalid(
                "attention",
                format!("bad dimensions: query {query_dim}, kv {kv_dim}, d_k {d_k}, heads {heads}"),
            ));
        }
        let lin = |store: &mut ParamStore, n: &str, i: usize, o: usize, init: Init, r: &mut rng::Rng| {
            Linear::new(store, &format!("{name}.{n}"), i, o, false, init, r).w
        };
        let wq = lin(store, "q", query_dim, d_k, Init::Scaled(1.0), r);
        let wk = lin(store, "k", kv_dim, d_k, Init::Scaled(1.0), r);
        let wv = lin(store, "v", kv_dim, d_k, Init::Scaled(1.0), r);
        let out_init = if spec.zero_out { Init::Zero } else { Init::Scaled(1.0) };
        let wo = lin(store, "o", d_k, query_dim, out_init, r);
        let norm = spec.norm.then(|| LayerNorm::new(store, &format!("{name}.norm"), query_dim));
        Ok(AttentionParams {
            wq,
            wk,
            wv,
            wo,
            norm,
            heads,
            query_dim,
            kv_dim,
            d_k,
        })
    }

    pub(crate) fn project(&self, g: &mut Graph, p: &Bound, xq: Var, xkv: Var) -> Result<(Var, Var, Var)> {
        let q = g.matmul(xq, p.var(self.wq))?;
        let k = g.matmul(xkv, p.var(self.wk))?;
        let v = g.matmul(xkv, p.var(self.wv))?;
        Ok((q, k, v))
    }

    pub(crate) fn attend(&self, g: &mut Graph, q: Var, k: Var, v: Var, table: &std::rc::Rc<KeyTable>) -> Result<Var> {
        if self.heads == 1 {
            return orthogonal::indexed(g, q, k, v, table);
        }
        let hd = self.d_k / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice(q, 1, h * hd, hd)?;
            let kh = g.slice(k, 1, h * hd, hd)?;
            let vh = g.slice(v, 1, h * hd, hd)?;
            outs.push(orthogonal::indexed(g, qh, kh, vh, table)?);
        }
        g.concat(&outs, 1)
    }

    /// `x + attended W_O`.
    pub(crate) fn finish(&self, g: &mut Graph, p: &Bound, x: Var, attended: Var) -> Result<Var> {
        let o = g.matmul(attended, p.var(self.wo))?;
        g.add(x, o)
    }
}
