//! Analytic gradients of the margin-controlled loss against central finite
//! differences.

mod common;

use common::fd::{agrees, min_hidden_preactivation, numeric_grad, random_case};
use fedld::linalg::Matrix;
use fedld::model::{evaluate, forward_logits, loss_and_grad, Architecture, ModelParams, ModelShape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_architecture(arch: Architecture, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambdas = [0.0, 0.03, 0.1];
    let mut checked = 0;
    while checked < 100 {
        let (p, x, y) = random_case(&mut rng, arch);
        if min_hidden_preactivation(&p, &x) < 1e-3 {
            continue;
        }
        let lambda = lambdas[checked % 3];
        let (_, g) = loss_and_grad(&p, &x, &y, lambda).unwrap();
        let num = numeric_grad(&p, |q| evaluate(q, &x, &y, lambda).unwrap().total);
        for (k, (a, n)) in g.iter().zip(&num).enumerate() {
            assert!(agrees(*a, *n), "{arch:?} case {checked} λ={lambda} coord {k}: analytic {a} vs numeric {n}");
        }
        checked += 1;
    }
}

#[test]
fn softmax_regression_gradients_match_finite_differences() {
    check_architecture(Architecture::SoftmaxRegression, 1);
}

#[test]
fn mlp_gradients_match_finite_differences() {
    check_architecture(Architecture::Mlp { hidden: 6 }, 2);
}

#[test]
fn margin_term_alone_matches_finite_differences() {
    // grad(total at λ) − grad(total at 0) = λ·∇ mean ln(1+‖f‖²)
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for arch in [Architecture::SoftmaxRegression, Architecture::Mlp { hidden: 5 }] {
        let mut done = 0;
        while done < 20 {
            let (p, x, y) = random_case(&mut rng, arch);
            if min_hidden_preactivation(&p, &x) < 1e-3 {
                continue;
            }
            let (_, g1) = loss_and_grad(&p, &x, &y, 1.0).unwrap();
            let (_, g0) = loss_and_grad(&p, &x, &y, 0.0).unwrap();
            let num = numeric_grad(&p, |q| evaluate(q, &x, &y, 0.0).unwrap().margin_penalty);
            for (k, n) in num.iter().enumerate() {
                let a = g1[k] - g0[k];
                assert!((a - n).abs() <= 1e-5 * a.abs().max(1e-3), "coord {k}: {a} vs {n}");
            }
            done += 1;
        }
    }
}

#[test]
fn margin_penalty_grows_with_logit_scale() {
    let shape = ModelShape::new(Architecture::SoftmaxRegression, 3, 4);
    let base = ModelParams::init(shape, 17);
    let x = Matrix::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.2, -0.3]]).unwrap();
    let y = [1, 3];
    let mut prev = -1.0;
    for s in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
        // Scaling every weight and bias scales the logits of a linear model.
        let flat = base.flat().iter().map(|v| v * s).collect();
        let p = ModelParams::from_flat(shape, flat).unwrap();
        let norm: f64 = forward_logits(&p, x.row(0)).unwrap().iter().map(|v| v * v).sum();
        let r = evaluate(&p, &x, &y, 0.1).unwrap();
        assert!(r.margin_penalty >= prev, "penalty decreased at scale {s} (‖f‖² = {norm})");
        prev = r.margin_penalty;
    }
}
