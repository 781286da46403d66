//! Opacity of a constant-density slab: quadrature against the closed form
//! as the number of samples grows.

use trifield::render::{integrate_ray, sample_points};

fn main() -> trifield::Result<()> {
    let (sigma, near, far) = (2.0f64, 0.0, 1.0);
    let exact = 1.0 - (-sigma * (far - near)).exp();
    println!("exact opacity {exact:.8}");
    for n in [4, 16, 64, 256, 1024] {
        let ts = sample_points(near, far, n, None);
        let r = integrate_ray(&vec![sigma; n], &vec![[1.0, 0.5, 0.25]; n], &ts, far)?;
        println!(
            "n = {n:>4}: opacity {:.8}  rel error {:.3e}  depth {:.4}  rgb {:.4?}",
            r.mask,
            (r.mask - exact).abs() / exact,
            r.depth,
            r.rgb
        );
    }
    Ok(())
}
