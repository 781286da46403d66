//! A freshly built refinement stack leaves a triplane unchanged. Once its
//! zero-initialized output projections are perturbed, captions steer the
//! result.

use trifield::attention::{tokenize, transformer_refine, Refiner, TextEncoder};
use trifield::numerics::{rng, ParamStore};
use trifield::triplane::Triplane;

fn main() -> trifield::Result<()> {
    let (res, ch, text_dim) = (4, 4, 8);
    let mut r = rng::seeded(3);
    let mut store = ParamStore::new();
    let encoder = TextEncoder::new(&mut store, "text", text_dim, &mut r);
    let refiner = Refiner::new(&mut store, "refine", res, ch, text_dim, 2, &mut r)?;
    let tri = Triplane::from_data(res, ch, rng::normal_tensor(&[3 * res * res * ch], 1.0, &mut r).into_data())?;

    let diff = |a: &Triplane, b: &Triplane| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let red = encoder.embed(&store, &tokenize("a small red cube")?)?;
    let fresh = transformer_refine(&tri, &red, &store, &refiner)?;
    println!("fresh stack: max change {:.3e}", diff(&fresh, &tri));

    for block in &refiner.blocks {
        for id in [block.ff.last().w, block.cross.wo, block.orthogonal.wo] {
            let n = store.get(id).data().len();
            let noise = rng::normal_tensor(&[n], 0.1, &mut r).into_data();
            store.get_mut(id).data_mut().copy_from_slice(&noise);
        }
    }
    let blue = encoder.embed(&store, &tokenize("a large blue cube")?)?;
    let a = transformer_refine(&tri, &red, &store, &refiner)?;
    let b = transformer_refine(&tri, &blue, &store, &refiner)?;
    println!("perturbed stack: max change {:.3e}, caption effect {:.3e}", diff(&a, &tri), diff(&a, &b));
    Ok(())
}
