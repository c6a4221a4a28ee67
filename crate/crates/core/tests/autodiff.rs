use proptest::prelude::*;
use ulab::tensor::{grad_check, Conv2dGeometry};
use ulab::{Result, Tape, Tensor, Var};

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

fn f<'t>(tape: &'t Tape, x: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    Ok(x.square().mul(&tape.constant(w.clone()))?.sum_all())
}

fn g<'t>(x: Var<'t>) -> Var<'t> {
    x.sigmoid().scale(3.0).sum_all()
}

proptest! {
    #[test]
    fn gradients_are_linear(xs in vector(6), ws in vector(6)) {
        let x = Tensor::vector(xs);
        let w = Tensor::vector(ws);
        let grad_of = |which: u8| -> Tensor {
            let tape = Tape::new();
            let v = tape.leaf(x.clone());
            let out = match which {
                0 => f(&tape, v, &w).unwrap(),
                1 => g(v),
                _ => f(&tape, v, &w).unwrap().add(&g(v)).unwrap(),
            };
            out.backward().unwrap().wrt(&v)
        };
        let (a, b, both) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..6 {
            prop_assert!((both.data()[i] - a.data()[i] - b.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_ops_match_finite_differences(xs in prop::collection::vec(0.5f64..2.0, 6)) {
        let x = Tensor::new(vec![2, 3], xs).unwrap();
        let w = Tensor::from_f64(vec![3, 2], &[0.3, -0.7, 1.1, 0.2, -0.4, 0.9]).unwrap();
        let err = grad_check(
            |tape, v| {
                let h = v.matmul(&tape.constant(w.clone()))?.sigmoid();
                let n = v.l2_norm(1)?.expand(&[2, 3], &[1])?;
                let ratio = v.div(&n)?.sqrt()?.sum_all();
                let z = h.softmax_cross_entropy(&[1, 0])?;
                z.add(&ratio)?.add(&v.mean(&[0])?.square().sum_all())
            },
            &x,
            1e-3,
        ).unwrap();
        prop_assert!(err < 1e-6, "{}", err);
    }

    #[test]
    fn relu_away_from_its_kink(xs in prop::collection::vec(prop_oneof![-2.0f64..-1e-3, 1e-3f64..2.0], 8)) {
        let x = Tensor::vector(xs);
        let err = grad_check(|_, v| Ok(v.relu().square().sum_all()), &x, 1e-4).unwrap();
        prop_assert!(err < 1e-6, "{}", err);
    }
}

#[test]
fn conv_padding_stride_gradient() {
    let x = Tensor::from_f64(vec![1, 2, 4, 4], &(0..32).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect::<Vec<_>>()).unwrap();
    let k = Tensor::from_f64(vec![2, 2, 3, 3], &(0..36).map(|i| ((i * 5) % 13) as f64 / 6.0 - 1.0).collect::<Vec<_>>()).unwrap();
    let geom = Conv2dGeometry { stride: 2, padding: 1 };
    let err = grad_check(|tape, v| Ok(v.conv2d(&tape.constant(k.clone()), None, geom)?.square().sum_all()), &x, 1e-3).unwrap();
    assert!(err < 1e-6, "{err}");
    let err = grad_check(|tape, v| Ok(tape.constant(x.clone()).conv2d(&v, None, geom)?.square().sum_all()), &k, 1e-3).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn forward_is_bit_reproducible() {
    let run = || {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(vec![3, 2], &[0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap());
        let w = tape.constant(Tensor::from_f64(vec![2, 2], &[1.5, -0.5, 0.25, 2.0]).unwrap());
        let y = x.matmul(&w).unwrap().sigmoid().l2_norm(1).unwrap();
        let bits: Vec<u64> = y.value().data().iter().map(|v| v.to_bits()).collect();
        bits
    };
    assert_eq!(run(), run());
}
