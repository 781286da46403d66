//! Three axis-aligned feature planes over the cube `[-1, 1]^3`.
//!
//! Plane `xy` is indexed by `(u, v) = (x, y)`, `xz` by `(x, z)` and `yz` by
//! `(y, z)`. Texel centers sit on integer coordinates, so world coordinate
//! `-1` maps to texel 0 and `+1` to texel `D - 1`.

pub(crate) mod io;
mod sample;

pub use io::{read_triplane, write_triplane, TRIPLANE_MAGIC, TRIPLANE_VERSION};
pub use sample::{
    plane_marginal, project_point, sample_features, sample_triplane, Marginal, PlaneCoord,
    Projection, Reducer,
};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlaneId {
    Xy,
    Xz,
    Yz,
}

impl PlaneId {
    pub const ALL: [PlaneId; 3] = [PlaneId::Xy, PlaneId::Xz, PlaneId::Yz];

    pub fn index(self) -> usize {
        match self {
            PlaneId::Xy => 0,
            PlaneId::Xz => 1,
            PlaneId::Yz => 2,
        }
    }

    /// World axes along the plane's `u` and `v` coordinates.
    pub fn axes(self) -> (Axis, Axis) {
        match self {
            PlaneId::Xy => (Axis::X, Axis::Y),
            PlaneId::Xz => (Axis::X, Axis::Z),
            PlaneId::Yz => (Axis::Y, Axis::Z),
        }
    }

    /// The axis two distinct planes have in common.
    pub fn shared_axis(self, other: PlaneId) -> Option<Axis> {
        if self == other {
            return None;
        }
        let (a0, a1) = self.axes();
        let (b0, b1) = other.axes();
        [a0, a1].into_iter().find(|a| *a == b0 || *a == b1)
    }

    pub fn name(self) -> &'static str {
        match self {
            PlaneId::Xy => "xy",
            PlaneId::Xz => "xz",
            PlaneId::Yz => "yz",
        }
    }
}

/// Feature planes `xy`, `xz`, `yz`, each `D x D x C`.
///
/// Storage is plane-major, then `v`, then `u`, with the `C` channels of a
/// texel contiguous. Viewed as a matrix this is `[3 * D * D, C]`: one row per
/// texel, which is also the token layout used by the attention layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplane {
    res: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Triplane {
    pub fn zeros(res: usize, channels: usize) -> Result<Self> {
        Self::constant(res, channels, 0.0)
    }

    pub fn constant(res: usize, channels: usize, value: f64) -> Result<Self> {
        if res == 0 || channels == 0 {
            return Err(Error::invalid(
                "triplane",
                format!("resolution and channels must be positive, got D={res}, C={channels}"),
            ));
        }
        Ok(Triplane {
            res,
            channels,
            data: vec![value; 3 * res * res * channels],
        })
    }

    pub fn from_data(res: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let mut t = Self::zeros(res, channels)?;
        if data.len() != t.data.len() {
            return Err(Error::invalid(
                "triplane",
                format!("expected {} values, got {}", t.data.len(), data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("triplane", "non-finite value"));
        }
        t.data = data;
        Ok(t)
    }

    /// Accepts `[3, D, D, C]` or `[3 * D * D, C]`.
    pub fn from_tensor(res: usize, t: &Tensor) -> Result<Self> {
        let channels = *t.shape().last().unwrap_or(&0);
        if t.len() != 3 * res * res * channels {
            return Err(Error::invalid(
                "triplane",
                format!("tensor of shape {:?} is not a triplane with D={res}", t.shape()),
            ));
        }
        Self::from_data(res, channels, t.data().to_vec())
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn texels(&self) -> usize {
        3 * self.res * self.res
    }

    pub fn plane_len(&self) -> usize {
        self.res * self.res * self.channels
    }

    pub fn plane(&self, id: PlaneId) -> &[f64] {
        let n = self.plane_len();
        &self.data[id.index() * n..(id.index() + 1) * n]
    }

    pub fn plane_mut(&mut self, id: PlaneId) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[id.index() * n..(id.index() + 1) * n]
    }

    /// Row index of texel `(u, v)` of `plane` in the `[3 * D * D, C]` view.
    pub fn row(&self, plane: PlaneId, u: usize, v: usize) -> usize {
        (plane.index() * self.res + v) * self.res + u
    }

    pub fn texel(&self, plane: PlaneId, u: usize, v: usize) -> &[f64] {
        let r = self.row(plane, u, v) * self.channels;
        &self.data[r..r + self.channels]
    }

    pub fn texel_mut(&mut self, plane: PlaneId, u: usize, v: usize) -> &mut [f64] {
        let r = self.row(plane, u, v) * self.channels;
        &mut self.data[r..r + self.channels]
    }

    /// `[3 * D * D, C]` token matrix.
    pub fn to_tokens(&self) -> Tensor {
        Tensor::raw(vec![self.texels(), self.channels], self.data.clone())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::raw(vec![3, self.res, self.res, self.channels], self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &Triplane, b: f64) -> Result<Triplane> {
        if self.res != other.res || self.channels != other.channels {
            return Err(Error::shape(
                "triplane",
                &[self.res, self.channels],
                &[other.res, other.channels],
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Triplane {
            res: self.res,
            channels: self.channels,
            data,
        })
    }

    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}
