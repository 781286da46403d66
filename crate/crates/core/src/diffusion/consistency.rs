//! Agreement of occupancy shadows across planes.

use crate::triplane::{plane_marginal, Marginal, PlaneId, Reducer, Triplane};

/// Max-profile of channel 0 of `plane` along the axis that survives the
/// reduction.
fn profile(tri: &Triplane, plane: PlaneId, reduce: Marginal) -> Vec<f64> {
    let c = tri.channels();
    plane_marginal(tri.plane(plane), tri.res(), reduce, Reducer::Max)
        .into_iter()
        .step_by(c)
        .collect()
}

/// Mean absolute difference between the occupancy profiles that two planes
/// give for the same world axis, averaged over `x`, `y` and `z`.
///
/// Profiles take the maximum of channel 0 across the other in-plane axis,
/// so the exact shadows of any axis-aligned box score 0.
pub fn cross_plane_consistency(tri: &Triplane) -> f64 {
    let pairs = [
        // x: u of xy and u of xz
        ((PlaneId::Xy, Marginal::V), (PlaneId::Xz, Marginal::V)),
        // y: v of xy and u of yz
        ((PlaneId::Xy, Marginal::U), (PlaneId::Yz, Marginal::V)),
        // z: v of xz and v of yz
        ((PlaneId::Xz, Marginal::U), (PlaneId::Yz, Marginal::U)),
    ];
    let d = tri.res() as f64;
    pairs
        .iter()
        .map(|&((p1, r1), (p2, r2))| {
            let (a, b) = (profile(tri, p1, r1), profile(tri, p2, r2));
            a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / d
        })
        .sum::<f64>()
        / 3.0
}

/// Expected score of planes filled with independent uniform `[0, 1]` values:
/// each profile entry is the maximum of `D` uniforms, and two independent
/// such maxima differ by `2 (1 / (D + 1) - 1 / (2D + 1))` on average.
pub fn independent_planes_expectation(res: usize) -> f64 {
    let d = res as f64;
    2.0 * (1.0 / (d + 1.0) - 1.0 / (2.0 * d + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::make_toy_triplane_dataset;

    #[test]
    fn toy_boxes_are_consistent() {
        for ex in make_toy_triplane_dataset(30, 16, 4, 1).unwrap() {
            assert_eq!(cross_plane_consistency(&ex.x0), 0.0);
        }
    }

    #[test]
    fn shifted_shadow_by_hand() {
        // a 1-texel line of occupancy along y at x = 1 on xy, but at x = 2 on xz
        let d = 4;
        let mut tri = Triplane::zeros(d, 1).unwrap();
        for v in 0..d {
            tri.texel_mut(PlaneId::Xy, 1, v)[0] = 1.0;
            tri.texel_mut(PlaneId::Xz, 2, v)[0] = 1.0;
        }
        for u in 0..d {
            for v in 0..d {
                tri.texel_mut(PlaneId::Yz, u, v)[0] = 1.0;
            }
        }
        // x: profiles [0,1,0,0] vs [0,0,1,0] -> 2/4; y: [1,1,1,1] vs [1,1,1,1] -> 0;
        // z: [1,1,1,1] vs [1,1,1,1] -> 0
        assert!((cross_plane_consistency(&tri) - 0.5 / 3.0).abs() < 1e-15);
    }
}
