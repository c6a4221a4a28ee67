use proptest::prelude::*;
use ulab::nn::ParamBinder;
use ulab::unitization::{general_unitize, partial_unitize, unitization_forward, UnitizationParams};
use ulab::{Tape, Tensor};

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Random direction scaled to a log-uniform norm in `[lo, hi]`.
fn scaled(d: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, d), lo.ln()..hi.ln()).prop_filter_map("zero direction", |(v, log_r)| {
        let n = norm(&v);
        (n > 1e-6).then(|| v.iter().map(|x| x * log_r.exp() / n).collect())
    })
}

fn forward(params: &UnitizationParams<f64>, xhat: &Tensor) -> Tensor {
    let tape = Tape::new();
    let mut b = ParamBinder::frozen(&tape);
    let y = unitization_forward(&mut b, params, tape.constant(xhat.clone())).unwrap();
    let v = y.value().clone();
    v
}

proptest! {
    #[test]
    fn zero_alpha_is_identity(xs in prop::collection::vec(-1e3f64..1e3, 12)) {
        let x = Tensor::new(vec![4, 3], xs).unwrap();
        let y = forward(&UnitizationParams::new(3), &x);
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn full_alpha_reaches_the_sphere(rows in prop::collection::vec(scaled(4, 1e-3, 1e3), 1..6)) {
        let mut params = UnitizationParams::new(4).with_eps(1e-300).unwrap();
        params.alpha = Tensor::ones(&[4]);
        let x = Tensor::new(vec![rows.len(), 4], rows.concat()).unwrap();
        let y = forward(&params, &x);
        for r in 0..rows.len() {
            prop_assert!((norm(y.row(r)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn general_norm_is_at_most_inverse_min_alpha(
        x in scaled(5, 1e-3, 1e3),
        alpha in prop::collection::vec(0.05f64..=1.0, 5),
    ) {
        let a = alpha.iter().copied().fold(f64::INFINITY, f64::min);
        let g = general_unitize(&x, &alpha).unwrap();
        prop_assert!(norm(&g) <= 1.0 / a * (1.0 + 1e-12));
    }

    #[test]
    fn general_preserves_signs(x in scaled(5, 1e-3, 1e3), alpha in prop::collection::vec(0.0f64..=1.0, 5)) {
        let g = general_unitize(&x, &alpha).unwrap();
        for (gi, xi) in g.iter().zip(&x) {
            prop_assert!(gi.signum() == xi.signum() || *xi == 0.0);
        }
    }

    #[test]
    fn partial_norm_decreases_in_alpha(x in scaled(3, 1.0 + 1e-6, 1e3), mut alphas in prop::collection::vec(0.0f64..=1.0, 2..8)) {
        alphas.sort_by(f64::total_cmp);
        let c = [1.0, 0.0, 0.0];
        let norms: Vec<f64> = alphas.iter().map(|&a| norm(&partial_unitize(&x, a, &c).unwrap())).collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }
}

#[test]
fn zero_inputs_follow_their_own_branches() {
    let c = [0.0, 1.0];
    assert_eq!(partial_unitize(&[0.0, 0.0], 1.0, &c).unwrap(), vec![0.0, 1.0]);
    assert_eq!(general_unitize(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    assert!(general_unitize(&[1.0, 0.0], &[1.5, 0.5]).is_err());
}
