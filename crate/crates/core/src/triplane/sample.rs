use super::{PlaneId, Triplane};
use crate::error::{Error, Result};
use crate::numerics::{Adjoint, Graph, Tensor, Var};

/// Continuous texel coordinate on one plane, `u, v` in `[0, D - 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneCoord {
    pub plane: PlaneId,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Coordinates on `xy`, `xz`, `yz`, in that order.
    pub coords: [PlaneCoord; 3],
    /// Number of world components that fell outside `[-1, 1]` and were clamped.
    pub clamped: u32,
}

impl Projection {
    pub fn on(&self, plane: PlaneId) -> PlaneCoord {
        self.coords[plane.index()]
    }
}

fn to_texel(c: f64, res: usize) -> f64 {
    (c + 1.0) * 0.5 * (res - 1) as f64
}

/// Map a world point to its three plane coordinates.
pub fn project_point(p: [f64; 3], res: usize) -> Projection {
    let mut clamped = 0;
    let mut t = [0.0; 3];
    for (ti, &c) in t.iter_mut().zip(&p) {
        let cc = c.clamp(-1.0, 1.0);
        if cc != c {
            clamped += 1;
        }
        *ti = to_texel(cc, res);
    }
    let coords = PlaneId::ALL.map(|plane| {
        let (a, b) = plane.axes();
        PlaneCoord {
            plane,
            u: t[a.index()],
            v: t[b.index()],
        }
    });
    Projection { coords, clamped }
}

/// Bilinear footprint of one coordinate on one plane.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    /// Texel rows (within the plane) of the four corners.
    rows: [usize; 4],
    weights: [f64; 4],
    /// Fractional offsets inside the cell.
    fu: f64,
    fv: f64,
}

fn cell(x: f64, res: usize) -> (usize, usize, f64) {
    if res == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (x.floor() as usize).min(res - 2);
    (i0, i0 + 1, x - i0 as f64)
}

fn footprint(u: f64, v: f64, res: usize) -> Footprint {
    let (u0, u1, fu) = cell(u, res);
    let (v0, v1, fv) = cell(v, res);
    Footprint {
        rows: [v0 * res + u0, v0 * res + u1, v1 * res + u0, v1 * res + u1],
        weights: [
            (1.0 - fu) * (1.0 - fv),
            fu * (1.0 - fv),
            (1.0 - fu) * fv,
            fu * fv,
        ],
        fu,
        fv,
    }
}

impl Footprint {
    fn du(&self) -> [f64; 4] {
        [-(1.0 - self.fv), 1.0 - self.fv, -self.fv, self.fv]
    }

    fn dv(&self) -> [f64; 4] {
        [-(1.0 - self.fu), -self.fu, 1.0 - self.fu, self.fu]
    }
}

/// Concatenated `xy | xz | yz` features at `p`, `3C` values.
pub fn sample_triplane(tri: &Triplane, p: [f64; 3]) -> Vec<f64> {
    let c = tri.channels();
    let proj = project_point(p, tri.res());
    let mut out = vec![0.0; 3 * c];
    for (k, pc) in proj.coords.iter().enumerate() {
        let fp = footprint(pc.u, pc.v, tri.res());
        let plane = tri.plane(pc.plane);
        for (row, w) in fp.rows.iter().zip(fp.weights) {
            for ch in 0..c {
                out[k * c + ch] += w * plane[row * c + ch];
            }
        }
    }
    out
}

struct SampleAdjoint {
    res: usize,
    channels: usize,
    /// Per point and plane.
    footprints: Vec<Footprint>,
    /// d(texel coord)/d(world coord) per point and axis; zero where clamped.
    jac: Vec<[f64; 3]>,
}

impl Adjoint for SampleAdjoint {
    fn name(&self) -> &'static str {
        "triplane_sample"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let c = self.channels;
        let plane_len = self.res * self.res * c;
        let planes = inputs[0].data();
        let g = grad.data();
        let mut gplanes = needs[0].then(|| vec![0.0; planes.len()]);
        let mut gpoints = needs[1].then(|| vec![0.0; inputs[1].len()]);
        for (pi, fps) in self.footprints.chunks(3).enumerate() {
            for (k, fp) in fps.iter().enumerate() {
                let base = k * plane_len;
                let gk = &g[(pi * 3 + k) * c..(pi * 3 + k + 1) * c];
                if let Some(gp) = gplanes.as_mut() {
                    for (row, w) in fp.rows.iter().zip(fp.weights) {
                        let off = base + row * c;
                        for ch in 0..c {
                            gp[off + ch] += w * gk[ch];
                        }
                    }
                }
                if let Some(gx) = gpoints.as_mut() {
                    let (du, dv) = (fp.du(), fp.dv());
                    let (mut su, mut sv) = (0.0, 0.0);
                    for j in 0..4 {
                        let off = base + fp.rows[j] * c;
                        let dot: f64 = (0..c).map(|ch| gk[ch] * planes[off + ch]).sum();
                        su += du[j] * dot;
                        sv += dv[j] * dot;
                    }
                    let (a, b) = PlaneId::ALL[k].axes();
                    gx[pi * 3 + a.index()] += su * self.jac[pi][a.index()];
                    gx[pi * 3 + b.index()] += sv * self.jac[pi][b.index()];
                }
            }
        }
        vec![
            gplanes.map(|d| Tensor::raw(inputs[0].shape().to_vec(), d)),
            gpoints.map(|d| Tensor::raw(inputs[1].shape().to_vec(), d)),
        ]
    }
}

/// Tape version of [`sample_triplane`].
///
/// `planes` is `[3, D, D, C]` (or `[3 * D * D, C]`), `points` is `[P, 3]`;
/// the result is `[P, 3C]`, differentiable in both inputs.
pub fn sample_features(g: &mut Graph, planes: Var, points: Var, res: usize) -> Result<Var> {
    let tp = g.value(planes);
    let tx = g.value(points);
    let c = *tp.shape().last().unwrap_or(&0);
    if c == 0 || tp.len() != 3 * res * res * c {
        return Err(Error::invalid(
            "triplane_sample",
            format!("planes of shape {:?} do not match D={res}", tp.shape()),
        ));
    }
    if tx.rank() != 2 || tx.shape()[1] != 3 {
        return Err(Error::shape("triplane_sample", tp.shape(), tx.shape()));
    }
    let n = tx.shape()[0];
    let pd = tp.data();
    let plane_len = res * res * c;
    let scale = 0.5 * (res - 1) as f64;
    let mut out = vec![0.0; n * 3 * c];
    let mut footprints = Vec::with_capacity(n * 3);
    let mut jac = Vec::with_capacity(n);
    for (pi, p) in tx.data().chunks(3).enumerate() {
        let proj = project_point([p[0], p[1], p[2]], res);
        jac.push([0, 1, 2].map(|a| if p[a].abs() <= 1.0 { scale } else { 0.0 }));
        for (k, pc) in proj.coords.iter().enumerate() {
            let fp = footprint(pc.u, pc.v, res);
            let o = &mut out[(pi * 3 + k) * c..(pi * 3 + k + 1) * c];
            for (row, w) in fp.rows.iter().zip(fp.weights) {
                let src = &pd[k * plane_len + row * c..k * plane_len + (row + 1) * c];
                for (a, b) in o.iter_mut().zip(src) {
                    *a += w * b;
                }
            }
            footprints.push(fp);
        }
    }
    let value = Tensor::raw(vec![n, 3 * c], out);
    Ok(g.custom(
        vec![planes, points],
        value,
        Box::new(SampleAdjoint {
            res,
            channels: c,
            footprints,
            jac,
        }),
    ))
}

/// Axis removed by [`plane_marginal`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marginal {
    /// Reduce over `u`, leaving a profile indexed by `v`.
    U,
    /// Reduce over `v`, leaving a profile indexed by `u`.
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reducer {
    Mean,
    Max,
}

/// Reduce a `D x D x C` plane (layout `v`, `u`, channel) to a `D x C` profile.
pub fn plane_marginal(plane: &[f64], res: usize, axis: Marginal, reducer: Reducer) -> Vec<f64> {
    let c = plane.len() / (res * res);
    let mut out = vec![
        match reducer {
            Reducer::Mean => 0.0,
            Reducer::Max => f64::NEG_INFINITY,
        };
        res * c
    ];
    for v in 0..res {
        for u in 0..res {
            let keep = match axis {
                Marginal::U => v,
                Marginal::V => u,
            };
            for ch in 0..c {
                let x = plane[(v * res + u) * c + ch];
                let slot = &mut out[keep * c + ch];
                match reducer {
                    Reducer::Mean => *slot += x / res as f64,
                    Reducer::Max => *slot = slot.max(x),
                }
            }
        }
    }
    out
}
