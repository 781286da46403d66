//! Prints a few captioned toy triplanes and confirms their planes agree.

use trifield::diffusion::{cross_plane_consistency, independent_planes_expectation};
use trifield::scenes::make_toy_triplane_dataset;
use trifield::triplane::PlaneId;

fn main() -> trifield::Result<()> {
    let res = 8;
    for ex in make_toy_triplane_dataset(3, res, 2, 7)? {
        println!("\"{}\"  box {:?}..{:?}  consistency {:.3}", ex.caption, ex.shape.lo, ex.shape.hi, cross_plane_consistency(&ex.x0));
        for plane in PlaneId::ALL {
            println!("  {} occupancy", plane.name());
            for v in (0..res).rev() {
                let row: String = (0..res)
                    .map(|u| match ex.x0.texel(plane, u, v)[0] {
                        x if x >= 1.0 => '#',
                        x if x > 0.0 => '+',
                        _ => '.',
                    })
                    .collect();
                println!("    {row}");
            }
        }
    }
    println!("independent uniform planes would score {:.3}", independent_planes_expectation(res));
    Ok(())
}
