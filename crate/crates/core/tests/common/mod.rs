//! Brute-force references used across the integration tests.
//!
//! Nothing here calls the library's attention or rendering code: key sets are
//! picked geometrically, and every product is spelled out with plain loops.
#![allow(dead_code)]

use trifield::attention::{AttentionParams, AttentionSpec};
use trifield::numerics::{rng, ParamStore};

/// World axes spanned by each plane, in the plane's `(u, v)` order.
/// x = 0, y = 1, z = 2; planes ordered xy, xz, yz.
pub const PLANE_AXES: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];

/// Summation order of the partner planes of each query plane.
pub const PARTNERS: [[usize; 2]; 3] = [[1, 2], [0, 2], [1, 0]];

pub fn token_row(res: usize, plane: usize, u: usize, v: usize) -> usize {
    (plane * res + v) * res + u
}

/// `[n, k] x [k, m]`, both row-major.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * m + j];
            }
            out[i * m + j] = s;
        }
    }
    out
}

pub fn layer_norm(x: &[f64], width: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(width) {
        let mu = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / width as f64;
        let sd = (var + 1e-5).sqrt();
        out.extend(row.iter().enumerate().map(|(j, v)| (v - mu) / sd * gamma[j] + beta[j]));
    }
    out
}

/// Softmax-weighted sum of `v` rows over `keys` for one query, head slice
/// `[lo, lo + hd)`.
fn attend_one(q: &[f64], k: &[f64], v: &[f64], dk: usize, keys: &[usize], lo: usize, hd: usize) -> Vec<f64> {
    let scores: Vec<f64> = keys
        .iter()
        .map(|&j| (0..hd).map(|t| q[lo + t] * k[j * dk + lo + t]).sum::<f64>() / (hd as f64).sqrt())
        .collect();
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut out = vec![0.0; hd];
    for (wj, &j) in w.iter().zip(keys) {
        for t in 0..hd {
            out[t] += wj / z * v[j * dk + lo + t];
        }
    }
    out
}

/// Keys of texel `(u, v)` of `plane` on `partner`: every partner texel that
/// shares its coordinate along the common axis, or lies on the partner's
/// cross-line (other coordinate equal to `cross`).
pub fn oa_keys(res: usize, plane: usize, partner: usize, u: usize, v: usize, cross: usize) -> Vec<usize> {
    let qa = PLANE_AXES[plane];
    let pa = PLANE_AXES[partner];
    let shared = *qa.iter().find(|a| pa.contains(a)).expect("planes share one axis");
    let q_coord = if qa[0] == shared { u } else { v };
    let mut keys = Vec::new();
    for kv in 0..res {
        for ku in 0..res {
            let (s, other) = if pa[0] == shared { (ku, kv) } else { (kv, ku) };
            if s == q_coord || other == cross {
                keys.push(token_row(res, partner, ku, kv));
            }
        }
    }
    keys
}

struct Weights {
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
    norm: Option<(Vec<f64>, Vec<f64>)>,
}

fn weights(store: &ParamStore, params: &AttentionParams) -> Weights {
    let get = |id| store.get(id).data().to_vec();
    Weights {
        wq: get(params.wq),
        wk: get(params.wk),
        wv: get(params.wv),
        wo: get(params.wo),
        norm: params.norm.map(|n| (get(n.gamma), get(n.beta))),
    }
}

/// Orthogonal attention on `[3 D D, C]` tokens, computed texel by texel.
pub fn oa_oracle(tokens: &[f64], res: usize, store: &ParamStore, params: &AttentionParams, cross: usize) -> Vec<f64> {
    let c = params.query_dim;
    let dk = params.d_k;
    let hd = dk / params.heads;
    let w = weights(store, params);
    let n = 3 * res * res;
    let h = match &w.norm {
        Some((g, b)) => layer_norm(tokens, c, g, b),
        None => tokens.to_vec(),
    };
    let q = matmul(&h, &w.wq, n, c, dk);
    let k = matmul(&h, &w.wk, n, c, dk);
    let v = matmul(&h, &w.wv, n, c, dk);
    let mut mixed = vec![0.0; n * dk];
    for plane in 0..3 {
        for vv in 0..res {
            for uu in 0..res {
                let row = token_row(res, plane, uu, vv);
                for partner in PARTNERS[plane] {
                    let keys = oa_keys(res, plane, partner, uu, vv, cross);
                    for head in 0..params.heads {
                        let a = attend_one(&q[row * dk..(row + 1) * dk], &k, &v, dk, &keys, head * hd, hd);
                        for t in 0..hd {
                            mixed[row * dk + head * hd + t] += a[t];
                        }
                    }
                }
            }
        }
    }
    let o = matmul(&mixed, &w.wo, n, dk, c);
    tokens.iter().zip(&o).map(|(a, b)| a + b).collect()
}

/// Every token row attends to every text row.
pub fn cross_oracle(tokens: &[f64], text: &[f64], store: &ParamStore, params: &AttentionParams) -> Vec<f64> {
    let c = params.query_dim;
    let dm = params.kv_dim;
    let dk = params.d_k;
    let hd = dk / params.heads;
    let w = weights(store, params);
    let n = tokens.len() / c;
    let l = text.len() / dm;
    let h = match &w.norm {
        Some((g, b)) => layer_norm(tokens, c, g, b),
        None => tokens.to_vec(),
    };
    let q = matmul(&h, &w.wq, n, c, dk);
    let k = matmul(text, &w.wk, l, dm, dk);
    let v = matmul(text, &w.wv, l, dm, dk);
    let keys: Vec<usize> = (0..l).collect();
    let mut mixed = vec![0.0; n * dk];
    for i in 0..n {
        for head in 0..params.heads {
            let a = attend_one(&q[i * dk..(i + 1) * dk], &k, &v, dk, &keys, head * hd, hd);
            mixed[i * dk + head * hd..i * dk + (head + 1) * hd].copy_from_slice(&a);
        }
    }
    let o = matmul(&mixed, &w.wo, n, dk, c);
    tokens.iter().zip(&o).map(|(a, b)| a + b).collect()
}

/// Attention parameters with a random (non-zero) output map and, when
/// `norm` is set, a random affine layer norm.
pub fn random_params(
    store: &mut ParamStore,
    query_dim: usize,
    kv_dim: usize,
    d_k: usize,
    heads: usize,
    norm: bool,
    seed: u64,
) -> AttentionParams {
    let mut r = rng::seeded(seed);
    let spec = AttentionSpec {
        heads,
        norm,
        zero_out: false,
        ..AttentionSpec::new(query_dim, kv_dim, d_k)
    };
    let params = AttentionParams::new(store, "attn", spec, &mut r).unwrap();
    if let Some(n) = params.norm {
        let g = rng::uniform_tensor(&[query_dim], 0.5, 1.5, &mut r);
        let b = rng::normal_tensor(&[query_dim], 0.3, &mut r);
        *store.get_mut(n.gamma) = g;
        *store.get_mut(n.beta) = b;
    }
    params
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
