//! Orthogonal attention: each texel attends, on each of the other two planes,
//! to the line sharing its coordinate along the common axis plus that
//! plane's cross-line.

use std::rc::Rc;

use super::sdpa::{indexed_attention, KeyTable};
use super::AttentionParams;
use crate::error::{Error, Result};
use crate::numerics::{Bound, Graph, ParamStore, Var};
use crate::triplane::{PlaneId, Triplane};

/// Texels of `key_plane` attended by one query texel, as `(u, v)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OaKeySet {
    pub key_plane: PlaneId,
    pub pixels: Vec<(usize, usize)>,
}

impl OaKeySet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Cross-line index used when none is configured: `floor(D / 2)`.
pub fn default_cross_line(res: usize) -> usize {
    res / 2
}

/// Key set of query texel `q = (u, v)` on `query_plane` against `key_plane`.
///
/// The shared-coordinate line comes first in ascending order, followed by the
/// cross-line texels not already listed, also ascending.
pub fn oa_key_set(
    res: usize,
    query_plane: PlaneId,
    key_plane: PlaneId,
    q: (usize, usize),
    cross_line_index: usize,
) -> Result<OaKeySet> {
    let shared = query_plane.shared_axis(key_plane).ok_or_else(|| {
        Error::invalid(
            "oa_key_set",
            format!("query and key planes are both {}", query_plane.name()),
        )
    })?;
    if q.0 >= res || q.1 >= res {
        return Err(Error::invalid("oa_key_set", format!("query {q:?} outside a {res}x{res} plane")));
    }
    if cross_line_index >= res {
        return Err(Error::invalid(
            "oa_key_set",
            format!("cross-line index {cross_line_index} outside 0..{res}"),
        ));
    }
    let (qa, _) = query_plane.axes();
    let qi = if qa == shared { q.0 } else { q.1 };
    let (ka, _) = key_plane.axes();
    // (shared coordinate, other coordinate) -> (u, v) on the key plane
    let texel = |i: usize, j: usize| if ka == shared { (i, j) } else { (j, i) };
    let mut pixels: Vec<(usize, usize)> = (0..res).map(|j| texel(qi, j)).collect();
    pixels.extend((0..res).filter(|&i| i != qi).map(|i| texel(i, cross_line_index)));
    Ok(OaKeySet { key_plane, pixels })
}

/// Precomputed key tables for every texel of a `D`-resolution triplane.
#[derive(Debug, Clone)]
pub struct OaLayout {
    res: usize,
    cross_line_index: usize,
    /// For each texel row, its key rows on the first and second partner plane.
    tables: [Rc<KeyTable>; 2],
}

/// Partner planes of each query plane, in summation order.
pub(crate) fn partners(plane: PlaneId) -> [PlaneId; 2] {
    match plane {
        PlaneId::Xy => [PlaneId::Xz, PlaneId::Yz],
        PlaneId::Xz => [PlaneId::Xy, PlaneId::Yz],
        PlaneId::Yz => [PlaneId::Xz, PlaneId::Xy],
    }
}

impl OaLayout {
    pub fn new(res: usize, cross_line_index: usize) -> Result<Self> {
        if res == 0 {
            return Err(Error::invalid("orthogonal_attention", "resolution must be positive"));
        }
        let row = |p: PlaneId, (u, v): (usize, usize)| (p.index() * res + v) * res + u;
        let mut lists: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
        for plane in PlaneId::ALL {
            for v in 0..res {
                for u in 0..res {
                    for (slot, key_plane) in partners(plane).into_iter().enumerate() {
                        let ks = oa_key_set(res, plane, key_plane, (u, v), cross_line_index)?;
                        lists[slot].push(ks.pixels.into_iter().map(|px| row(key_plane, px)).collect());
                    }
                }
            }
        }
        let [a, b] = lists;
        Ok(OaLayout {
            res,
            cross_line_index,
            tables: [Rc::new(KeyTable::from_lists(a)), Rc::new(KeyTable::from_lists(b))],
        })
    }

    pub fn with_default_cross_line(res: usize) -> Result<Self> {
        Self::new(res, default_cross_line(res))
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn cross_line_index(&self) -> usize {
        self.cross_line_index
    }

    pub(crate) fn tables(&self) -> &[Rc<KeyTable>; 2] {
        &self.tables
    }
}

/// Orthogonal attention on a `[3 * D * D, C]` token matrix, with residual.
///
/// All three planes read the same input; the two partner attentions are
/// normalized separately and summed before the output projection.
pub fn oa_forward(g: &mut Graph, p: &Bound, params: &AttentionParams, layout: &OaLayout, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 || shape[0] != 3 * layout.res * layout.res || shape[1] != params.query_dim {
        return Err(Error::shape(
            "orthogonal_attention",
            &shape,
            &[3 * layout.res * layout.res, params.query_dim],
        ));
    }
    oa_forward_tables(g, p, params, &layout.tables, x)
}

/// [`oa_forward`] with explicit key tables, e.g. for stacked batches.
pub(crate) fn oa_forward_tables(
    g: &mut Graph,
    p: &Bound,
    params: &AttentionParams,
    tables: &[Rc<KeyTable>; 2],
    x: Var,
) -> Result<Var> {
    let h = match params.norm {
        Some(n) => n.forward(g, p, x)?,
        None => x,
    };
    let (q, k, v) = params.project(g, p, h, h)?;
    let a = params.attend(g, q, k, v, &tables[0])?;
    let b = params.attend(g, q, k, v, &tables[1])?;
    let sum = g.add(a, b)?;
    params.finish(g, p, x, sum)
}

/// Standalone orthogonal attention over a triplane.
pub fn orthogonal_attention(
    tri: &Triplane,
    store: &ParamStore,
    params: &AttentionParams,
    cross_line_index: usize,
) -> Result<Triplane> {
    let layout = OaLayout::new(tri.res(), cross_line_index)?;
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(tri.to_tokens());
    let y = oa_forward(&mut g, &p, params, &layout, x)?;
    Triplane::from_tensor(tri.res(), g.value(y))
}

pub(crate) fn indexed(g: &mut Graph, q: Var, k: Var, v: Var, table: &Rc<KeyTable>) -> Result<Var> {
    indexed_attention(g, q, k, v, table.clone())
}
