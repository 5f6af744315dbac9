mod common;

use common::oracle::{logit_gradient_case, model_gradient_case, naive_loss, target};
use fer_core::loss::{ce_grad_logits, weighted_ce_from_logits};

#[test]
fn logit_gradient_matches_finite_differences() {
    for case in 0..50 {
        let err = logit_gradient_case(case);
        assert!(err < 1e-5, "case {case}: relative error {err:e}");
    }
}

#[test]
fn reference_model_gradient_matches_finite_differences() {
    for case in 0..50 {
        let err = model_gradient_case(case);
        assert!(err < 1e-5, "case {case}: relative error {err:e}");
    }
}

#[test]
fn library_loss_agrees_with_naive_formula() {
    let logits = [0.3, -1.2, 2.5, 0.0, 0.7, -0.4, 1.1];
    for class in 0..7 {
        let t = target(class, 7, 0.06);
        let a = weighted_ce_from_logits(&logits, &t, 1.7);
        let b = naive_loss(&logits, &t, 1.7);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn gradient_is_softmax_minus_target() {
    let logits = [1.0, 2.0, 3.0];
    let t = target(0, 3, 0.0);
    let g = ce_grad_logits(&logits, &t, 2.0);
    let z: f64 = logits.iter().map(|v: &f64| v.exp()).sum();
    for (k, gk) in g.iter().enumerate() {
        let expected = 2.0 * (logits[k].exp() / z - t[k]);
        assert!((gk - expected).abs() < 1e-14);
    }
}
