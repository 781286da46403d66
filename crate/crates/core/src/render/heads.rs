//! Density and color heads evaluated on triplane features.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::numerics::{rng, Bound, Graph, ParamStore, Tensor, Var};
use crate::triplane::{sample_features, Triplane};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadsConfig {
    pub hidden: usize,
    /// Hidden layers per head, at least one.
    pub layers: usize,
    /// Sinusoidal frequency bands added to the raw position; 0 disables.
    pub frequencies: usize,
    /// Initial bias of the density output before softplus.
    pub density_bias: f64,
}

impl Default for HeadsConfig {
    fn default() -> Self {
        HeadsConfig {
            hidden: 64,
            layers: 1,
            frequencies: 0,
            density_bias: 0.0,
        }
    }
}

/// `density` maps `enc(p) ++ feature` to one pre-density, `color` to three
/// pre-colors.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldHeads {
    pub density: Mlp,
    pub color: Mlp,
    pub frequencies: usize,
    pub channels: usize,
}

impl FieldHeads {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, cfg: &HeadsConfig, r: &mut rng::Rng) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 {
            return Err(Error::invalid("field_heads", "heads need at least one hidden layer"));
        }
        let input = encoding_dim(cfg.frequencies) + 3 * channels;
        let dims = |out: usize| {
            let mut d = vec![input];
            d.extend(std::iter::repeat_n(cfg.hidden, cfg.layers));
            d.push(out);
            d
        };
        let density = Mlp::new(store, &format!("{name}.density"), &dims(1), r)?;
        let color = Mlp::new(store, &format!("{name}.color"), &dims(3), r)?;
        if let Some(b) = density.last().b {
            store.get_mut(b).data_mut().fill(cfg.density_bias);
        }
        FieldHeads::from_parts(density, color, cfg.frequencies, channels)
    }

    /// Assembles heads from existing layers, checking their widths.
    pub fn from_parts(density: Mlp, color: Mlp, frequencies: usize, channels: usize) -> Result<Self> {
        let input = encoding_dim(frequencies) + 3 * channels;
        if density.in_dim() != input || color.in_dim() != input || density.out_dim() != 1 || color.out_dim() != 3 {
            return Err(Error::shape(
                "field_heads",
                &[density.in_dim(), density.out_dim(), color.in_dim(), color.out_dim()],
                &[input, 1, input, 3],
            ));
        }
        Ok(FieldHeads {
            density,
            color,
            frequencies,
            channels,
        })
    }

    pub fn input_dim(&self) -> usize {
        encoding_dim(self.frequencies) + 3 * self.channels
    }

    /// Raw positions followed by `sin` and `cos` of `2^k pi p` per axis.
    pub fn encode(&self, g: &mut Graph, points: Var) -> Result<Var> {
        if self.frequencies == 0 {
            return Ok(points);
        }
        let f = self.frequencies;
        let bands = Tensor::from_fn(&[3, 3 * f], |i| {
            let (row, col) = (i / (3 * f), i % (3 * f));
            if col / f == row {
                (1u64 << (col % f)) as f64 * PI
            } else {
                0.0
            }
        });
        let bands = g.constant(bands);
        let phase = g.matmul(points, bands)?;
        let s = g.sin(phase);
        let c = g.cos(phase);
        g.concat(&[points, s, c], 1)
    }

    /// Density `[P, 1]` and color `[P, 3]` at `points` (`[P, 3]`).
    pub fn forward(&self, g: &mut Graph, p: &Bound, planes: Var, res: usize, points: Var) -> Result<(Var, Var)> {
        let feat = sample_features(g, planes, points, res)?;
        let enc = self.encode(g, points)?;
        let input = g.concat(&[enc, feat], 1)?;
        let s = self.density.forward(g, p, input)?;
        let c = self.color.forward(g, p, input)?;
        Ok((g.softplus(s), g.sigmoid(c)))
    }
}

fn encoding_dim(frequencies: usize) -> usize {
    3 + 6 * frequencies
}

/// Density and color of the field at one point.
pub fn field_eval(tri: &Triplane, store: &ParamStore, heads: &FieldHeads, p: [f64; 3]) -> Result<(f64, [f64; 3])> {
    if tri.channels() != heads.channels {
        return Err(Error::shape("field_eval", &[tri.channels()], &[heads.channels]));
    }
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let planes = g.constant(tri.to_tokens());
    let pts = g.constant(Tensor::new(&[1, 3], p.to_vec())?);
    let (s, c) = heads.forward(&mut g, &bound, planes, tri.res(), pts)?;
    let c = g.value(c).data();
    Ok((g.value(s).data()[0], [c[0], c[1], c[2]]))
}
