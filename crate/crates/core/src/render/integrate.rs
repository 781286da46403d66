//! Exponential quadrature of density and color along rays.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::{Adjoint, Graph, Tensor, Var};

/// Color, opacity and expected termination distance of one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayResult {
    pub rgb: [f64; 3],
    pub mask: f64,
    pub depth: f64,
}

fn check_samples(ts: &[f64], far: f64) -> Result<()> {
    if ts.is_empty() {
        return Err(Error::invalid("integrate_ray", "no samples"));
    }
    if ts.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("integrate_ray", "sample distances are not strictly ascending"));
    }
    let last = ts[ts.len() - 1];
    if !(last <= far) || !ts[0].is_finite() {
        return Err(Error::invalid("integrate_ray", format!("last sample {last} beyond far bound {far}")));
    }
    Ok(())
}

/// Spacing to the next sample, and from the last sample to `far`.
fn delta(ts: &[f64], j: usize, far: f64) -> f64 {
    if j + 1 < ts.len() {
        ts[j + 1] - ts[j]
    } else {
        far - ts[j]
    }
}

/// `sigma` has one entry per sample, `rgb` three.
fn integrate_slices(sigma: &[f64], rgb: &[f64], ts: &[f64], far: f64) -> RayResult {
    let mut trans = 1.0;
    let mut out = RayResult {
        rgb: [0.0; 3],
        mask: 0.0,
        depth: 0.0,
    };
    for j in 0..ts.len() {
        let alpha = 1.0 - (-sigma[j] * delta(ts, j, far)).exp();
        let w = trans * alpha;
        for k in 0..3 {
            out.rgb[k] += w * rgb[3 * j + k];
        }
        out.mask += w;
        out.depth += w * ts[j];
        trans *= 1.0 - alpha;
    }
    out.depth += (1.0 - out.mask) * far;
    out
}

/// Integrates one ray: `alpha_j = 1 - exp(-sigma_j delta_j)`, weights
/// `w_j = T_j alpha_j` with `T_j` the product of `1 - alpha` before `j`.
/// Background depth is `far`.
pub fn integrate_ray(sigmas: &[f64], colors: &[[f64; 3]], ts: &[f64], far: f64) -> Result<RayResult> {
    if sigmas.len() != ts.len() || colors.len() != ts.len() {
        return Err(Error::shape("integrate_ray", &[sigmas.len(), colors.len()], &[ts.len()]));
    }
    check_samples(ts, far)?;
    if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::invalid("integrate_ray", "densities must be finite and non-negative"));
    }
    let flat: Vec<f64> = colors.iter().flatten().copied().collect();
    Ok(integrate_slices(sigmas, &flat, ts, far))
}

/// Per-sample weights `w_j` of one ray.
pub fn ray_weights(sigmas: &[f64], ts: &[f64], far: f64) -> Result<Vec<f64>> {
    if sigmas.len() != ts.len() {
        return Err(Error::shape("ray_weights", &[sigmas.len()], &[ts.len()]));
    }
    check_samples(ts, far)?;
    let mut trans = 1.0;
    Ok((0..ts.len())
        .map(|j| {
            let alpha = 1.0 - (-sigmas[j] * delta(ts, j, far)).exp();
            let w = trans * alpha;
            trans *= 1.0 - alpha;
            w
        })
        .collect())
}

struct VolumeAdjoint {
    ts: Rc<[f64]>,
    fars: Rc<[f64]>,
    samples: usize,
}

impl Adjoint for VolumeAdjoint {
    fn name(&self) -> &'static str {
        "volume_integrate"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (sigma, rgb) = (inputs[0].data(), inputs[1].data());
        let n = self.samples;
        let mut gs = vec![0.0; sigma.len()];
        let mut gc = vec![0.0; rgb.len()];
        let mut trans = vec![0.0; n + 1];
        let mut w = vec![0.0; n];
        let mut e = vec![0.0; n];
        for (r, &far) in self.fars.iter().enumerate() {
            let ts = &self.ts[r * n..(r + 1) * n];
            let s = &sigma[r * n..(r + 1) * n];
            let c = &rgb[3 * r * n..3 * (r + 1) * n];
            let g = &grad.data()[5 * r..5 * r + 5];
            trans[0] = 1.0;
            for j in 0..n {
                let alpha = 1.0 - (-s[j] * delta(ts, j, far)).exp();
                w[j] = trans[j] * alpha;
                trans[j + 1] = trans[j] * (1.0 - alpha);
                e[j] = g[0] * c[3 * j] + g[1] * c[3 * j + 1] + g[2] * c[3 * j + 2] + g[3] + g[4] * (ts[j] - far);
                for k in 0..3 {
                    gc[3 * (r * n + j) + k] = w[j] * g[k];
                }
            }
            let mut tail = 0.0;
            for j in (0..n).rev() {
                gs[r * n + j] = delta(ts, j, far) * (trans[j + 1] * e[j] - tail);
                tail += w[j] * e[j];
            }
        }
        vec![
            needs[0].then(|| Tensor::raw(inputs[0].shape().to_vec(), gs)),
            needs[1].then(|| Tensor::raw(inputs[1].shape().to_vec(), gc)),
        ]
    }
}

/// Integrates `R` rays of `samples` points each on the tape.
///
/// `sigma` is `[R * samples, 1]`, `rgb` is `[R * samples, 3]`, `ts` holds the
/// distances ray by ray and `fars` one far bound per ray. The output is
/// `[R, 5]`: red, green, blue, mask, depth.
pub fn volume_integrate(
    g: &mut Graph,
    sigma: Var,
    rgb: Var,
    ts: Rc<[f64]>,
    fars: Rc<[f64]>,
    samples: usize,
) -> Result<Var> {
    let rays = fars.len();
    let total = rays * samples;
    if samples == 0 || g.shape(sigma) != [total, 1] || g.shape(rgb) != [total, 3] || ts.len() != total {
        return Err(Error::shape("volume_integrate", g.shape(sigma), &[total, 1]));
    }
    for r in 0..rays {
        check_samples(&ts[r * samples..(r + 1) * samples], fars[r])?;
    }
    let (s, c) = (g.value(sigma).data(), g.value(rgb).data());
    let mut out = Vec::with_capacity(5 * rays);
    for (r, &far) in fars.iter().enumerate() {
        let span = r * samples..(r + 1) * samples;
        let res = integrate_slices(&s[span.clone()], &c[3 * span.start..3 * span.end], &ts[span], far);
        out.extend_from_slice(&res.rgb);
        out.push(res.mask);
        out.push(res.depth);
    }
    let value = Tensor::raw(vec![rays, 5], out);
    Ok(g.custom(vec![sigma, rgb], value, Box::new(VolumeAdjoint { ts, fars, samples })))
}
