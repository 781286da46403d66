//! Stack of text-conditioned refinement blocks over triplane tokens.

use super::cross::cross_attention_forward;
use super::orthogonal::{oa_forward, OaLayout};
use super::text::TextEmbedding;
use super::{AttentionParams, AttentionSpec};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Mlp};
use crate::numerics::{rng, Bound, Graph, ParamStore, Tensor, Var};
use crate::triplane::Triplane;

/// Cross-attention to text, then orthogonal attention, then a pre-norm
/// feed-forward layer, each with residual.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineBlock {
    pub cross: AttentionParams,
    pub orthogonal: AttentionParams,
    pub ff_norm: LayerNorm,
    pub ff: Mlp,
}

impl RefineBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        text_dim: usize,
        d_k: usize,
        r: &mut rng::Rng,
    ) -> Result<Self> {
        let cross_spec = AttentionSpec {
            norm: true,
            ..AttentionSpec::new(channels, text_dim, d_k)
        };
        let oa_spec = AttentionSpec {
            norm: true,
            ..AttentionSpec::new(channels, channels, d_k)
        };
        let cross = AttentionParams::new(store, &format!("{name}.cross"), cross_spec, r)?;
        let orthogonal = AttentionParams::new(store, &format!("{name}.oa"), oa_spec, r)?;
        let ff_norm = LayerNorm::new(store, &format!("{name}.ff_norm"), channels);
        let ff = Mlp::new(store, &format!("{name}.ff"), &[channels, 4 * channels, channels], r)?;
        let last = *ff.last();
        store.get_mut(last.w).data_mut().fill(0.0);
        Ok(RefineBlock {
            cross,
            orthogonal,
            ff_norm,
            ff,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, layout: &OaLayout, x: Var, text: Var) -> Result<Var> {
        let x = cross_attention_forward(g, p, &self.cross, x, text)?;
        let x = oa_forward(g, p, &self.orthogonal, layout, x)?;
        let h = self.ff_norm.forward(g, p, x)?;
        let h = self.ff.forward(g, p, h)?;
        g.add(x, h)
    }
}

#[derive(Debug, Clone)]
pub struct Refiner {
    pub blocks: Vec<RefineBlock>,
    pub layout: OaLayout,
    pub channels: usize,
    pub text_dim: usize,
}

impl Refiner {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        res: usize,
        channels: usize,
        text_dim: usize,
        depth: usize,
        r: &mut rng::Rng,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| RefineBlock::new(store, &format!("{name}.{i}"), channels, text_dim, channels.max(4), r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Refiner {
            blocks,
            layout: OaLayout::with_default_cross_line(res)?,
            channels,
            text_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, text: Var) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, p, &self.layout, h, text)?;
        }
        Ok(h)
    }
}

/// Run every block of `refiner` over `tri` conditioned on `text`.
pub fn transformer_refine(
    tri: &Triplane,
    text: &TextEmbedding,
    store: &ParamStore,
    refiner: &Refiner,
) -> Result<Triplane> {
    if tri.res() != refiner.layout.res() || tri.channels() != refiner.channels {
        return Err(Error::shape(
            "transformer_refine",
            &[tri.res(), tri.channels()],
            &[refiner.layout.res(), refiner.channels],
        ));
    }
    if text.d_model() != refiner.text_dim {
        return Err(Error::shape("transformer_refine", text.tensor().shape(), &[text.len(), refiner.text_dim]));
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(tri.to_tokens());
    let t = g.constant(text.tensor().clone());
    let y = refiner.forward(&mut g, &p, x, t)?;
    let out: &Tensor = g.value(y);
    Triplane::from_tensor(tri.res(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn perturb(store: &mut ParamStore, r: &mut rng::Rng) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let t = store.get_mut(id);
            let noise = rng::normal_tensor(t.shape(), 0.3, r);
            for (a, b) in t.data_mut().iter_mut().zip(noise.data()) {
                *a += b;
            }
        }
    }

    fn text(r: &mut rng::Rng) -> TextEmbedding {
        TextEmbedding::new(rng::normal_tensor(&[3, 5], 1.0, r)).unwrap()
    }

    #[test]
    fn fresh_refiner_is_identity() {
        let mut r = rng::seeded(5);
        let mut store = ParamStore::new();
        let refiner = Refiner::new(&mut store, "ref", 3, 2, 5, 2, &mut r).unwrap();
        let tri = Triplane::from_data(3, 2, rng::normal_tensor(&[54], 1.0, &mut r).into_data()).unwrap();
        let out = transformer_refine(&tri, &text(&mut r), &store, &refiner).unwrap();
        assert_eq!(out, tri);
    }

    #[test]
    fn depth_one_matches_layer_composition() {
        let mut r = rng::seeded(6);
        let mut store = ParamStore::new();
        let refiner = Refiner::new(&mut store, "ref", 3, 2, 5, 1, &mut r).unwrap();
        perturb(&mut store, &mut r);
        let tri = Triplane::from_data(3, 2, rng::normal_tensor(&[54], 1.0, &mut r).into_data()).unwrap();
        let txt = text(&mut r);
        let out = transformer_refine(&tri, &txt, &store, &refiner).unwrap();

        let b = &refiner.blocks[0];
        let a = super::super::cross_attention(&tri, &txt, &store, &b.cross).unwrap();
        let a = super::super::orthogonal_attention(&a, &store, &b.orthogonal, refiner.layout.cross_line_index()).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(a.to_tokens());
        let h = b.ff_norm.forward(&mut g, &p, x).unwrap();
        let h = b.ff.forward(&mut g, &p, h).unwrap();
        let y = g.add(x, h).unwrap();
        let want = Triplane::from_tensor(3, g.value(y)).unwrap();
        let diff = out.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
        assert_ne!(out, tri);
    }

    #[test]
    fn depth_two_gradients() {
        let mut r = rng::seeded(7);
        let mut store = ParamStore::new();
        let refiner = Refiner::new(&mut store, "ref", 2, 2, 5, 2, &mut r).unwrap();
        perturb(&mut store, &mut r);
        let txt = text(&mut r);
        let w = rng::normal_tensor(&[12, 2], 1.0, &mut r);
        let x0 = rng::normal_tensor(&[12, 2], 1.0, &mut r);
        let err = grad_check(
            |g: &mut Graph, x: Var| {
                let p = store.bind(g);
                let t = g.constant(txt.tensor().clone());
                let y = refiner.forward(g, &p, x, t)?;
                let wv = g.constant(w.clone());
                let y = g.mul(y, wv)?;
                Ok(g.sum(y))
            },
            &x0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
