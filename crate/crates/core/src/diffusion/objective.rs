//! Noise-prediction objective.

use crate::attention::TextEmbedding;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::triplane::{PlaneId, Triplane};

use super::denoiser::Denoiser;
use super::schedule::{q_sample, NoiseSchedule};

/// Which planes enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Sum of the per-plane mean squared errors over all three planes.
    AllPlanes,
    /// Mean squared error on a single plane, the per-image form.
    Plane(PlaneId),
}

/// Builds the loss on `g`: noise `x0` to step `t` with `eps`, run `predict`
/// on the `[3 D^2, C]` noisy tokens and compare with `eps`.
pub fn epsilon_loss_with<F>(
    g: &mut Graph,
    predict: F,
    x0: &Triplane,
    t: usize,
    eps: &Triplane,
    sched: &NoiseSchedule,
    mode: LossMode,
) -> Result<Var>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let xt = q_sample(x0, t, eps, sched)?;
    let xv = g.constant(xt.to_tokens());
    let pred = predict(g, xv)?;
    let target = eps.to_tokens();
    if g.shape(pred) != target.shape() {
        return Err(Error::shape("epsilon_loss", g.shape(pred), target.shape()));
    }
    let tv = g.constant(target);
    let diff = g.sub(pred, tv)?;
    let plane_rows = x0.res() * x0.res();
    let planes: Vec<PlaneId> = match mode {
        LossMode::AllPlanes => PlaneId::ALL.to_vec(),
        LossMode::Plane(p) => vec![p],
    };
    let mut total = None;
    for p in planes {
        let d = g.slice(diff, 0, p.index() * plane_rows, plane_rows)?;
        let sq = g.square(d);
        let m = g.mean(sq);
        total = Some(match total {
            None => m,
            Some(acc) => g.add(acc, m)?,
        });
    }
    Ok(total.expect("at least one plane"))
}

/// Loss of `model` on one example.
pub fn epsilon_loss(
    model: &Denoiser,
    x0: &Triplane,
    text: &TextEmbedding,
    t: usize,
    eps: &Triplane,
    sched: &NoiseSchedule,
    mode: LossMode,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let l = epsilon_loss_with(
        &mut g,
        |g, x| model.forward(g, &p, x, &[t], std::slice::from_ref(text)),
        x0,
        t,
        eps,
        sched,
        mode,
    )?;
    Ok(g.value(l).item())
}

/// Stacks triplanes into `[B * 3 D^2, C]` rows.
pub fn stack(tris: &[&Triplane]) -> Result<Tensor> {
    let first = tris.first().ok_or_else(|| Error::invalid("stack", "no triplanes"))?;
    let mut data = Vec::with_capacity(tris.len() * first.data().len());
    for t in tris {
        if t.res() != first.res() || t.channels() != first.channels() {
            return Err(Error::shape("stack", &[t.res(), t.channels()], &[first.res(), first.channels()]));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(&[tris.len() * first.texels(), first.channels()], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;
    use crate::numerics::rng;

    fn setup(seed: u64) -> (Triplane, Triplane, NoiseSchedule) {
        let mut r = rng::seeded(seed);
        let x0 = Triplane::from_data(4, 2, rng::normal_tensor(&[96], 1.0, &mut r).into_data()).unwrap();
        let eps = Triplane::from_data(4, 2, rng::normal_tensor(&[96], 1.0, &mut r).into_data()).unwrap();
        (x0, eps, make_schedule(10, 1e-3, 0.1).unwrap())
    }

    fn run<F: FnOnce(&mut Graph, Var) -> Result<Var>>(f: F, mode: LossMode, seed: u64) -> f64 {
        let (x0, eps, s) = setup(seed);
        let mut g = Graph::new();
        let l = epsilon_loss_with(&mut g, f, &x0, 4, &eps, &s, mode).unwrap();
        g.value(l).item()
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let (_, eps, _) = setup(1);
        let l = run(|g, _| Ok(g.constant(eps.to_tokens())), LossMode::AllPlanes, 1);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn zero_predictor_scores_noise_energy() {
        let (_, eps, _) = setup(2);
        let l = run(|g, x| Ok(g.scale(x, 0.0)), LossMode::AllPlanes, 2);
        let plane = 16 * 2;
        let want: f64 = (0..3)
            .map(|p| eps.data()[p * plane..(p + 1) * plane].iter().map(|e| e * e).sum::<f64>() / plane as f64)
            .sum();
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn all_planes_is_sum_of_single_planes() {
        let f = |g: &mut Graph, x: Var| Ok(g.tanh(x));
        let all = run(f, LossMode::AllPlanes, 3);
        let parts: f64 = PlaneId::ALL.iter().map(|&p| run(f, LossMode::Plane(p), 3)).sum();
        assert_eq!(all, parts);
    }
}
