//! Ancestral sampling.

use crate::attention::TextEmbedding;
use crate::error::{Error, Result};
use crate::numerics::rng::{self, Rng};
use crate::numerics::Tensor;
use crate::triplane::Triplane;

use super::denoiser::Denoiser;
use super::schedule::NoiseSchedule;

/// Runs the reverse chain from unit noise at step `T` down to step 1 for a
/// stack of `batch` triplanes, with `predict(x, t)` returning the noise
/// estimate for all of them.
///
/// Each step forms `x0_hat = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`,
/// optionally clamps it to `clip`, takes the posterior mean
/// `c0 x0_hat + ct x_t` and, except at the last step, adds noise with the
/// posterior variance. Without clipping this is the usual
/// `(x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t)` mean.
pub fn ddpm_sample_with<F>(
    mut predict: F,
    batch: usize,
    rows: usize,
    channels: usize,
    sched: &NoiseSchedule,
    r: &mut Rng,
    clip: Option<(f64, f64)>,
) -> Result<Tensor>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    let shape = [batch * rows, channels];
    let mut x = rng::normal_tensor(&shape, 1.0, r);
    for t in (1..=sched.steps()).rev() {
        let eps = predict(&x, t)?;
        if eps.shape() != shape {
            return Err(Error::shape("ddpm_sample", eps.shape(), &shape));
        }
        let (ab, ab_prev, beta) = (sched.alpha_bar(t), sched.alpha_bar_prev(t), sched.beta(t));
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let noise = (t > 1).then(|| rng::normal_tensor(&shape, 1.0, r));
        let sd = sched.posterior_variance(t).sqrt();
        for (i, xi) in x.data_mut().iter_mut().enumerate() {
            let mut x0 = (*xi - (1.0 - ab).sqrt() * eps.data()[i]) / ab.sqrt();
            if let Some((lo, hi)) = clip {
                x0 = x0.clamp(lo, hi);
            }
            let mean = c0 * x0 + ct * *xi;
            *xi = match &noise {
                Some(z) => mean + sd * z.data()[i],
                None => mean,
            };
        }
    }
    Ok(x)
}

/// One sample per caption, drawn together as a stack.
pub fn ddpm_sample(
    model: &Denoiser,
    text: &[TextEmbedding],
    sched: &NoiseSchedule,
    r: &mut Rng,
    clip: Option<(f64, f64)>,
) -> Result<Vec<Triplane>> {
    if text.is_empty() {
        return Err(Error::invalid("ddpm_sample", "need at least one caption"));
    }
    let b = text.len();
    let rows = model.rows();
    let x = ddpm_sample_with(
        |x, t| model.predict(x, &vec![t; b], text),
        b,
        rows,
        model.cfg.channels,
        sched,
        r,
        clip,
    )?;
    x.data()
        .chunks(rows * model.cfg.channels)
        .map(|d| Triplane::from_data(model.cfg.res, model.cfg.channels, d.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::NoiseSchedule;

    #[test]
    fn single_step_chain_matches_closed_form() {
        let sched = NoiseSchedule::from_betas(vec![0.3]).unwrap();
        let eps_hat = Tensor::new(&[2, 1], vec![0.25, -1.5]).unwrap();
        let mut r = rng::seeded(4);
        let out = ddpm_sample_with(|_, _| Ok(eps_hat.clone()), 1, 2, 1, &sched, &mut r, None).unwrap();
        let x1 = rng::normal_tensor(&[2, 1], 1.0, &mut rng::seeded(4));
        for i in 0..2 {
            let want = (x1.data()[i] - 0.3 / 0.3f64.sqrt() * eps_hat.data()[i]) / 0.7f64.sqrt();
            assert!((out.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_chains_repeat() {
        let sched = NoiseSchedule::from_betas(vec![0.1, 0.2, 0.3]).unwrap();
        let f = |x: &Tensor, t: usize| Ok(x.map(|v| 0.1 * v * t as f64));
        let a = ddpm_sample_with(f, 2, 3, 2, &sched, &mut rng::seeded(9), Some((-1.0, 1.0))).unwrap();
        let b = ddpm_sample_with(f, 2, 3, 2, &sched, &mut rng::seeded(9), Some((-1.0, 1.0))).unwrap();
        assert_eq!(a, b);
    }
}
