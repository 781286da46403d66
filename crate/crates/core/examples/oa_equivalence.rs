//! Shows which texels a query attends to under orthogonal attention, then
//! checks the batched implementation against a plain per-texel loop.

use trifield::attention::{oa_key_set, orthogonal_attention, AttentionParams, AttentionSpec};
use trifield::numerics::{rng, ParamStore};
use trifield::triplane::{PlaneId, Triplane};

const PAIRS: [(PlaneId, [PlaneId; 2]); 3] = [
    (PlaneId::Xy, [PlaneId::Xz, PlaneId::Yz]),
    (PlaneId::Xz, [PlaneId::Xy, PlaneId::Yz]),
    (PlaneId::Yz, [PlaneId::Xz, PlaneId::Xy]),
];

fn main() -> trifield::Result<()> {
    let (res, ch, d_k, cross) = (4, 3, 4, 1);
    for key_plane in [PlaneId::Xz, PlaneId::Yz] {
        let keys = oa_key_set(res, PlaneId::Xy, key_plane, (2, 3), cross)?;
        println!("xy texel (2, 3) on {}: {:?}", key_plane.name(), keys.pixels);
    }

    let mut r = rng::seeded(1);
    let mut store = ParamStore::new();
    // the default zeroed output projection would make the check trivial
    let spec = AttentionSpec { zero_out: false, ..AttentionSpec::new(ch, ch, d_k) };
    let params = AttentionParams::new(&mut store, "oa", spec, &mut r)?;
    let tri = Triplane::from_data(res, ch, rng::normal_tensor(&[3 * res * res * ch], 1.0, &mut r).into_data())?;
    let fast = orthogonal_attention(&tri, &store, &params, cross)?;

    let w = |id| store.get(id).data().to_vec();
    let (wq, wk, wv, wo) = (w(params.wq), w(params.wk), w(params.wv), w(params.wo));
    let project = |x: &[f64], m: &[f64], out: usize| -> Vec<f64> {
        (0..out).map(|j| x.iter().enumerate().map(|(i, xi)| xi * m[i * out + j]).sum()).collect()
    };
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut worst = 0.0f64;
    for (plane, partners) in PAIRS {
        for v in 0..res {
            for u in 0..res {
                let x = tri.texel(plane, u, v);
                let q = project(x, &wq, d_k);
                let mut mixed = vec![0.0; d_k];
                for kp in partners {
                    let keys = oa_key_set(res, plane, kp, (u, v), cross)?;
                    let feats: Vec<&[f64]> = keys.pixels.iter().map(|&(a, b)| tri.texel(kp, a, b)).collect();
                    let logits: Vec<f64> = feats
                        .iter()
                        .map(|f| scale * project(f, &wk, d_k).iter().zip(&q).map(|(a, b)| a * b).sum::<f64>())
                        .collect();
                    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for (f, ei) in feats.iter().zip(&e) {
                        for (m, vk) in mixed.iter_mut().zip(project(f, &wv, d_k)) {
                            *m += ei / z * vk;
                        }
                    }
                }
                let out = project(&mixed, &wo, ch);
                for (c, o) in out.iter().enumerate() {
                    worst = worst.max((x[c] + o - fast.texel(plane, u, v)[c]).abs());
                }
            }
        }
    }
    println!("max |batched - per-texel| over {} texels: {worst:.3e}", 3 * res * res);
    Ok(())
}
