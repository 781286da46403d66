//! Scaled dot-product attention restricted to a per-query key list.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::{Adjoint, Graph, Tensor, Var};

/// Key rows attended by each query row, in compressed row form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyTable {
    offsets: Vec<usize>,
    keys: Vec<usize>,
}

impl KeyTable {
    pub fn from_lists<I, L>(lists: I) -> Self
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = usize>,
    {
        let mut offsets = vec![0];
        let mut keys = Vec::new();
        for l in lists {
            keys.extend(l);
            offsets.push(keys.len());
        }
        KeyTable { offsets, keys }
    }

    /// Every query attends to all `n_keys` rows.
    pub fn dense(n_queries: usize, n_keys: usize) -> Self {
        Self::from_lists((0..n_queries).map(|_| 0..n_keys))
    }

    pub fn queries(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn keys_of(&self, q: usize) -> &[usize] {
        &self.keys[self.offsets[q]..self.offsets[q + 1]]
    }
}

struct AttnAdjoint {
    table: Rc<KeyTable>,
    /// Softmax weights laid out like `table.keys`.
    probs: Vec<f64>,
    scale: f64,
}

impl Adjoint for AttnAdjoint {
    fn name(&self) -> &'static str {
        "indexed_attention"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let dk = q.shape()[1];
        let dv = v.shape()[1];
        let (qd, kd, vd, gd) = (q.data(), k.data(), v.data(), grad.data());
        let mut gq = vec![0.0; q.len()];
        let mut gk = vec![0.0; k.len()];
        let mut gv = vec![0.0; v.len()];
        let mut dp = Vec::new();
        for i in 0..self.table.queries() {
            let keys = self.table.keys_of(i);
            let probs = &self.probs[self.table.offsets[i]..self.table.offsets[i + 1]];
            let gi = &gd[i * dv..(i + 1) * dv];
            dp.clear();
            let mut dot = 0.0;
            for (&j, &p) in keys.iter().zip(probs) {
                let vj = &vd[j * dv..(j + 1) * dv];
                let d: f64 = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                dp.push(d);
                dot += p * d;
                for (a, b) in gv[j * dv..(j + 1) * dv].iter_mut().zip(gi) {
                    *a += p * b;
                }
            }
            let qi = &qd[i * dk..(i + 1) * dk];
            for ((&j, &p), &d) in keys.iter().zip(probs).zip(&dp) {
                let ds = p * (d - dot) * self.scale;
                let kj = &kd[j * dk..(j + 1) * dk];
                for (a, b) in gq[i * dk..(i + 1) * dk].iter_mut().zip(kj) {
                    *a += ds * b;
                }
                for (a, b) in gk[j * dk..(j + 1) * dk].iter_mut().zip(qi) {
                    *a += ds * b;
                }
            }
        }
        vec![
            needs[0].then(|| Tensor::raw(q.shape().to_vec(), gq)),
            needs[1].then(|| Tensor::raw(k.shape().to_vec(), gk)),
            needs[2].then(|| Tensor::raw(v.shape().to_vec(), gv)),
        ]
    }
}

/// `out[i] = softmax_j(q[i] . k[j] / sqrt(dk)) v[j]` over `j` in the key
/// list of query `i`.
///
/// `q` is `[Nq, dk]`, `k` is `[Nk, dk]`, `v` is `[Nk, dv]`.
pub fn indexed_attention(g: &mut Graph, q: Var, k: Var, v: Var, table: Rc<KeyTable>) -> Result<Var> {
    let (tq, tk, tv) = (g.value(q), g.value(k), g.value(v));
    if tq.rank() != 2 || tk.rank() != 2 || tq.shape()[1] != tk.shape()[1] {
        return Err(Error::shape("indexed_attention", tq.shape(), tk.shape()));
    }
    if tv.rank() != 2 || tv.shape()[0] != tk.shape()[0] {
        return Err(Error::shape("indexed_attention", tk.shape(), tv.shape()));
    }
    if table.queries() != tq.shape()[0] {
        return Err(Error::invalid(
            "indexed_attention",
            format!("key table has {} queries, q has {} rows", table.queries(), tq.shape()[0]),
        ));
    }
    let nk = tk.shape()[0];
    if table.keys.iter().any(|&j| j >= nk) {
        return Err(Error::invalid("indexed_attention", "key index out of range"));
    }
    if (0..table.queries()).any(|i| table.keys_of(i).is_empty()) {
        return Err(Error::invalid("indexed_attention", "empty key list"));
    }
    let dk = tq.shape()[1];
    let dv = tv.shape()[1];
    let scale = 1.0 / (dk as f64).sqrt();
    let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
    let mut probs = vec![0.0; table.keys.len()];
    let mut out = vec![0.0; table.queries() * dv];
    for i in 0..table.queries() {
        let keys = table.keys_of(i);
        let pr = &mut probs[table.offsets[i]..table.offsets[i + 1]];
        let qi = &qd[i * dk..(i + 1) * dk];
        let mut mx = f64::NEG_INFINITY;
        for (p, &j) in pr.iter_mut().zip(keys) {
            let s: f64 = qi.iter().zip(&kd[j * dk..(j + 1) * dk]).map(|(a, b)| a * b).sum();
            *p = s * scale;
            mx = mx.max(*p);
        }
        let mut z = 0.0;
        for p in pr.iter_mut() {
            *p = (*p - mx).exp();
            z += *p;
        }
        let oi = &mut out[i * dv..(i + 1) * dv];
        for (p, &j) in pr.iter_mut().zip(keys) {
            *p /= z;
            for (a, b) in oi.iter_mut().zip(&vd[j * dv..(j + 1) * dv]) {
                *a += *p * b;
            }
        }
    }
    let value = Tensor::raw(vec![table.queries(), dv], out);
    Ok(g.custom(vec![q, k, v], value, Box::new(AttnAdjoint { table, probs, scale })))
}
