use std::rc::Rc;

use proptest::prelude::*;
use trifield::numerics::{grad_check, rng, Graph, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor {
    rng::normal_tensor(shape, 1.0, &mut rng::seeded(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..7, shift in -50.0f64..50.0, seed in any::<u64>()) {
        let x = random(&[rows, cols], seed);
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let sa = g.softmax(a, 1).unwrap();
        let b = g.constant(x.map(|v| v + shift));
        let sb = g.softmax(b, 1).unwrap();
        for row in g.value(sa).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
        prop_assert!(g.value(sa).max_abs_diff(g.value(sb)) < 1e-12);
    }

    #[test]
    fn backward_is_linear_in_the_output(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in any::<u64>()) {
        let x = random(&[3, 4], seed);
        let w = random(&[4, 2], seed ^ 7);
        let grad_of = |a: f64, b: f64| {
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let wv = g.constant(w.clone());
            let m = g.matmul(xv, wv).unwrap();
            let t = g.tanh(m);
            let f1 = g.sum(t);
            let sq = g.square(xv);
            let f2 = g.mean(sq);
            let s1 = g.scale(f1, a);
            let s2 = g.scale(f2, b);
            let out = g.add(s1, s2).unwrap();
            g.backward(out).unwrap();
            g.grad(xv).unwrap().clone()
        };
        let combined = grad_of(alpha, beta);
        let g1 = grad_of(1.0, 0.0);
        let g2 = grad_of(0.0, 1.0);
        for i in 0..combined.len() {
            let want = alpha * g1.data()[i] + beta * g2.data()[i];
            prop_assert!((combined.data()[i] - want).abs() < 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn matmul_adjoint_matches_differences(n in 1usize..4, k in 1usize..4, m in 1usize..4, seed in any::<u64>()) {
        let b = random(&[k, m], seed ^ 3);
        let x = random(&[n, k], seed);
        let err = grad_check(|g, v| {
            let bv = g.constant(b.clone());
            let y = g.matmul(v, bv)?;
            let s = g.sin(y);
            Ok(g.sum(s))
        }, &x, 1e-5).unwrap();
        prop_assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn layer_norm_standardizes_rows(rows in 1usize..4, width in 2usize..8, seed in any::<u64>()) {
        let x = random(&[rows, width], seed).map(|v| 3.0 * v + 1.0);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let gamma = g.constant(Tensor::full(&[width], 1.0));
        let beta = g.constant(Tensor::zeros(&[width]));
        let y = g.layer_norm(xv, gamma, beta).unwrap();
        for (inp, row) in x.data().chunks(width).zip(g.value(y).data().chunks(width)) {
            let stats = |r: &[f64]| {
                let mu = r.iter().sum::<f64>() / width as f64;
                (mu, r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / width as f64)
            };
            let (_, var_in) = stats(inp);
            let (mu, var) = stats(row);
            prop_assert!(mu.abs() < 1e-12);
            // the epsilon pulls the variance under one: var / (var + eps)
            let want = var_in / (var_in + 1e-5);
            prop_assert!((var - want).abs() < 1e-10, "{var} vs {want}");
        }
    }

    #[test]
    fn gather_scatters_gradient_back(seed in any::<u64>(), picks in proptest::collection::vec(proptest::option::of(0usize..4), 1..8)) {
        let x = random(&[4, 3], seed);
        let index: Rc<[Option<usize>]> = picks.clone().into();
        let mut g = Graph::new();
        let xv = g.param(x);
        let y = g.gather_rows(xv, index).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        let grad = g.grad(xv).unwrap();
        for r in 0..4 {
            let count = picks.iter().filter(|p| **p == Some(r)).count() as f64;
            prop_assert!(grad.data()[r * 3..r * 3 + 3].iter().all(|&d| d == count));
        }
    }
}

#[test]
fn shape_mismatch_is_an_error_not_a_panic() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(g.matmul(a, b).is_err());
    let c = g.constant(Tensor::zeros(&[3, 2]));
    assert!(g.add(a, c).is_err());
    assert!(g.concat(&[a, c], 1).is_err());
}
