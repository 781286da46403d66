//! Central finite-difference checks of tape adjoints.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`.
///
/// `f` builds a scalar on a fresh graph from the input leaf it is handed.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_detailed(f, x, eps, None).map(|r| r.max_rel_error)
}

/// Like [`grad_check`], optionally corrupting the adjoint of one op.
pub fn grad_check_detailed<F>(f: F, x: &Tensor, eps: f64, fault: Option<&'static str>) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let out = f(&mut g, v)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::new();
    if let Some(op) = fault {
        g.inject_adjoint_fault(op);
    }
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    scalar_of(&g, out)?;
    g.backward(out)?;
    let analytic = g.grad(v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);

    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(probe.clone())?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(probe.clone())?;
        probe.data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * eps));
    }

    let (worst, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    Ok(GradCheck {
        max_rel_error,
        worst,
        analytic,
        numeric,
    })
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::NonScalar {
            op: "grad_check",
            shape: crate::error::Dims(t.shape().to_vec()),
        });
    }
    Ok(t.item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_matches_central_differences() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(
            |g, x| {
                let y = g.square(x);
                Ok(g.sum(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let x = Tensor::new(&[4], vec![0.3, -1.2, 2.0, 0.1]).unwrap();
        let report = grad_check_detailed(
            |g, x| {
                let y = g.softmax(x, 0)?;
                Ok(g.sum(y))
            },
            &x,
            1e-5,
            None,
        )
        .unwrap();
        assert!(report.analytic.iter().all(|v| v.abs() < 1e-15));
        assert!(report.max_rel_error < 1e-7);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::zeros(&[3]);
        let err = grad_check(|g, x| Ok(g.exp(x)), &x, 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonScalar { .. }));
    }

    #[test]
    fn corrupted_adjoint_is_detected() {
        let x = Tensor::new(&[3], vec![0.2, -0.4, 0.9]).unwrap();
        let f = |g: &mut Graph, x: Var| {
            let y = g.sigmoid(x);
            Ok(g.sum(y))
        };
        let clean = grad_check_detailed(f, &x, 1e-5, None).unwrap();
        let bad = grad_check_detailed(f, &x, 1e-5, Some("sigmoid")).unwrap();
        assert!(clean.max_rel_error < 1e-8);
        assert!(bad.max_rel_error > 0.05);
    }
}
