//! Procedural triplanes of axis-aligned colored boxes with captions.

use rand::Rng as _;

use crate::attention::tokenize;
use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::triplane::{PlaneId, Triplane};

/// Named box colors; every name is in the caption vocabulary.
pub const TOY_COLORS: [(&str, [f64; 3]); 8] = [
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("magenta", [1.0, 0.0, 1.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("orange", [1.0, 0.5, 0.0]),
];

/// Inclusive texel ranges of a box along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub color: usize,
}

impl ToyBox {
    /// 1 inside the range, 0.5 on the texel either side, 0 elsewhere.
    pub fn profile(&self, axis: usize, i: usize) -> f64 {
        let (lo, hi) = (self.lo[axis], self.hi[axis]);
        if (lo..=hi).contains(&i) {
            1.0
        } else if i + 1 == lo || i == hi + 1 {
            0.5
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTriplaneExample {
    pub x0: Triplane,
    pub caption: String,
    pub tokens: Vec<usize>,
    pub shape: ToyBox,
}

fn size_word(extent: f64) -> &'static str {
    if extent < 0.35 {
        "small"
    } else if extent < 0.6 {
        "medium"
    } else {
        "large"
    }
}

/// Channel 0 of each plane holds the box's orthographic shadow, the product
/// of its two axis profiles; channels `1..` hold that shadow times the box
/// color (cycled if there are more than three).
pub fn render_toy_box(b: &ToyBox, res: usize, channels: usize) -> Result<Triplane> {
    let mut tri = Triplane::zeros(res, channels)?;
    let color = TOY_COLORS[b.color].1;
    for plane in PlaneId::ALL {
        let (a, c) = plane.axes();
        for v in 0..res {
            for u in 0..res {
                let occ = b.profile(a.index(), u) * b.profile(c.index(), v);
                let t = tri.texel_mut(plane, u, v);
                t[0] = occ;
                for (ch, x) in t.iter_mut().enumerate().skip(1) {
                    *x = occ * color[(ch - 1) % 3];
                }
            }
        }
    }
    Ok(tri)
}

/// `count` random boxes on a `res`-texel grid, reproducible from `seed`.
pub fn make_toy_triplane_dataset(count: usize, res: usize, channels: usize, seed: u64) -> Result<Vec<ToyTriplaneExample>> {
    if count == 0 {
        return Err(Error::invalid("toy_dataset", "count must be positive"));
    }
    if res < 6 || channels == 0 {
        return Err(Error::invalid("toy_dataset", format!("need res >= 6 and channels >= 1, got {res}, {channels}")));
    }
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|_| {
            let mut lo = [0; 3];
            let mut hi = [0; 3];
            for k in 0..3 {
                // leave one texel of border on each side
                let len = r.random_range(2..=res - 4);
                let start = r.random_range(1..=res - 1 - len);
                lo[k] = start;
                hi[k] = start + len - 1;
            }
            let shape = ToyBox {
                lo,
                hi,
                color: r.random_range(0..TOY_COLORS.len()),
            };
            let extent = (0..3).map(|k| (hi[k] - lo[k] + 1) as f64).sum::<f64>() / (3 * res) as f64;
            let noun = if (0..3).all(|k| hi[k] - lo[k] == hi[0] - lo[0]) { "cube" } else { "box" };
            let caption = format!("a {} {} {noun}", size_word(extent), TOY_COLORS[shape.color].0);
            Ok(ToyTriplaneExample {
                x0: render_toy_box(&shape, res, channels)?,
                tokens: tokenize(&caption)?,
                caption,
                shape,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplane::{plane_marginal, Marginal, Reducer};

    #[test]
    fn reproducible() {
        let a = make_toy_triplane_dataset(5, 16, 4, 3).unwrap();
        let b = make_toy_triplane_dataset(5, 16, 4, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_toy_triplane_dataset(5, 16, 4, 4).unwrap());
    }

    #[test]
    fn x_shadow_agrees_between_xy_and_xz() {
        for ex in make_toy_triplane_dataset(20, 16, 4, 9).unwrap() {
            let xy = plane_marginal(ex.x0.plane(PlaneId::Xy), 16, Marginal::V, Reducer::Max);
            let xz = plane_marginal(ex.x0.plane(PlaneId::Xz), 16, Marginal::V, Reducer::Max);
            assert_eq!(xy, xz);
            assert!(ex.caption.starts_with("a "));
            assert_eq!(ex.tokens.len(), 4);
        }
    }
}
