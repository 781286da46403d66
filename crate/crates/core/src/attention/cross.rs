use std::rc::Rc;

use super::sdpa::KeyTable;
use super::text::TextEmbedding;
use super::AttentionParams;
use crate::error::{Error, Result};
use crate::numerics::{Bound, Graph, ParamStore, Var};
use crate::triplane::Triplane;

/// Every row of `x` (`[N, C]`) attends to all text tokens (`[L, d_model]`),
/// with residual.
pub fn cross_attention_forward(g: &mut Graph, p: &Bound, params: &AttentionParams, x: Var, text: Var) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let ts = g.shape(text).to_vec();
    if ts.len() != 2 || ts[0] == 0 {
        return Err(Error::invalid("cross_attention", "empty token list"));
    }
    if xs.len() != 2 || xs[1] != params.query_dim || ts[1] != params.kv_dim {
        return Err(Error::shape("cross_attention", &xs, &ts));
    }
    let table = Rc::new(KeyTable::dense(xs[0], ts[0]));
    attend_with_table(g, p, params, x, text, &table)
}

/// Residual attention from the rows of `x` to the rows of `kv` listed in
/// `table`.
pub(crate) fn attend_with_table(
    g: &mut Graph,
    p: &Bound,
    params: &AttentionParams,
    x: Var,
    kv: Var,
    table: &Rc<KeyTable>,
) -> Result<Var> {
    let h = match params.norm {
        Some(n) => n.forward(g, p, x)?,
        None => x,
    };
    let kv = if kv == x { h } else { kv };
    let (q, k, v) = params.project(g, p, h, kv)?;
    let a = params.attend(g, q, k, v, table)?;
    params.finish(g, p, x, a)
}

/// Standalone cross-attention from triplane texels to text tokens.
pub fn cross_attention(
    tri: &Triplane,
    text: &TextEmbedding,
    store: &ParamStore,
    params: &AttentionParams,
) -> Result<Triplane> {
    if text.is_empty() {
        return Err(Error::invalid("cross_attention", "empty token list"));
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(tri.to_tokens());
    let t = g.constant(text.tensor().clone());
    let y = cross_attention_forward(&mut g, &p, params, x, t)?;
    Triplane::from_tensor(tri.res(), g.value(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionSpec;
    use crate::numerics::{gemm, rng, Tensor};

    fn setup(c: usize, d_model: usize, d_k: usize, seed: u64) -> (ParamStore, AttentionParams, Triplane) {
        let mut r = rng::seeded(seed);
        let mut store = ParamStore::new();
        let spec = AttentionSpec {
            zero_out: false,
            ..AttentionSpec::new(c, d_model, d_k)
        };
        let params = AttentionParams::new(&mut store, "ca", spec, &mut r).unwrap();
        let tri = Triplane::from_data(3, c, rng::normal_tensor(&[27 * c], 1.0, &mut r).into_data()).unwrap();
        (store, params, tri)
    }

    fn project(store: &ParamStore, params: &AttentionParams, token: &[f64]) -> Vec<f64> {
        let (wv, wo) = (store.get(params.wv), store.get(params.wo));
        let mut v = vec![0.0; params.d_k];
        gemm(1, params.kv_dim, params.d_k, token, false, wv.data(), false, &mut v, 0.0);
        let mut o = vec![0.0; params.query_dim];
        gemm(1, params.d_k, params.query_dim, &v, false, wo.data(), false, &mut o, 0.0);
        o
    }

    #[test]
    fn single_token_adds_the_same_increment_everywhere() {
        let (store, params, tri) = setup(2, 3, 4, 1);
        let token = vec![0.4, -1.0, 0.25];
        let text = TextEmbedding::new(Tensor::new(&[1, 3], token.clone()).unwrap()).unwrap();
        let out = cross_attention(&tri, &text, &store, &params).unwrap();
        let inc = project(&store, &params, &token);
        for (o, i) in out.data().chunks(2).zip(tri.data().chunks(2)) {
            assert!((o[0] - i[0] - inc[0]).abs() < 1e-12);
            assert!((o[1] - i[1] - inc[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_values_give_identity() {
        let (mut store, params, tri) = setup(2, 3, 4, 2);
        store.get_mut(params.wv).data_mut().fill(0.0);
        let text = TextEmbedding::new(Tensor::full(&[2, 3], 0.5)).unwrap();
        assert_eq!(cross_attention(&tri, &text, &store, &params).unwrap(), tri);
    }

    #[test]
    fn two_token_softmax_closed_form() {
        // identity-like projections: q = x W_Q, keys are e1 and e2 scaled by s
        let mut store = ParamStore::new();
        let mut r = rng::seeded(0);
        let spec = AttentionSpec {
            zero_out: false,
            ..AttentionSpec::new(2, 2, 2)
        };
        let params = AttentionParams::new(&mut store, "ca", spec, &mut r).unwrap();
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        for id in [params.wq, params.wk, params.wv, params.wo] {
            *store.get_mut(id) = eye.clone();
        }
        let s = 6.0;
        let tri = Triplane::from_data(1, 2, [s, 0.0].repeat(3)).unwrap();
        let text = TextEmbedding::new(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let out = cross_attention(&tri, &text, &store, &params).unwrap();
        // scores s / sqrt(2) and 0; weight on token 1 is the logistic of their gap
        let w1 = 1.0 / (1.0 + (-s / 2f64.sqrt()).exp());
        let want = [s + w1, 1.0 - w1];
        assert!((out.data()[0] - want[0]).abs() < 1e-12);
        assert!((out.data()[1] - want[1]).abs() < 1e-12);
        assert!(w1 > 0.98);
    }

    #[test]
    fn empty_text_rejected() {
        let (store, params, tri) = setup(2, 3, 4, 3);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(tri.to_tokens());
        let t = g.constant(Tensor::zeros(&[2, 2]));
        assert!(cross_attention_forward(&mut g, &p, &params, x, t).is_err());
    }
}
