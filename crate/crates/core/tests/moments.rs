use proptest::prelude::*;
use ulab::moments::moments4;

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 4..40).prop_filter("spread", |v| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64 > 1e-3
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn affine_equivariance(v in values(), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let m = moments4(&v).unwrap();
        let y: Vec<f64> = v.iter().map(|x| a * x + b).collect();
        let n = moments4(&y).unwrap();
        prop_assert!(close(n.mean, a * m.mean + b, 1e-10));
        prop_assert!(close(n.var, a * a * m.var, 1e-10));
        prop_assert!(close(n.skewness, m.skewness, 1e-10));
        prop_assert!(close(n.kurtosis, m.kurtosis, 1e-10));
    }

    #[test]
    fn pearson_inequality(v in values()) {
        let m = moments4(&v).unwrap();
        prop_assert!(m.kurtosis >= m.skewness * m.skewness + 1.0 - 1e-12);
    }

    #[test]
    fn duplication_leaves_moments_unchanged(v in values()) {
        let m = moments4(&v).unwrap();
        let n = moments4(&[v.clone(), v].concat()).unwrap();
        prop_assert!(close(n.mean, m.mean, 1e-12));
        prop_assert!(close(n.var, m.var, 1e-12));
        prop_assert!(close(n.skewness, m.skewness, 1e-10));
        prop_assert!(close(n.kurtosis, m.kurtosis, 1e-10));
    }
}

#[test]
fn constant_values_have_no_standardized_moments() {
    assert!(moments4(&[2.0; 8]).is_err());
    assert!(moments4(&[1.0, 2.0, 3.0]).is_err());
}
