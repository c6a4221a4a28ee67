use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn eval_scalar<T, F>(f: &F, x: &Tensor<T>) -> Result<T>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let input = tape.constant(x.clone());
    let out = f(&tape, input)?;
    let v = out.value();
    v.item()
        .ok_or_else(|| Error::Contract(format!("gradient check needs a scalar output, got shape {:?}", v.shape())))
}

/// Fourth-order central difference of `g` at 0 with step `h`.
pub fn five_point<T: Scalar>(mut g: impl FnMut(T) -> Result<T>, h: T) -> Result<T> {
    let near = g(h)? - g(-h)?;
    let far = g(h + h)? - g(-(h + h))?;
    Ok((T::of(8.0) * near - far) / (T::of(12.0) * h))
}

/// Finite-difference gradient of a scalar function (five-point stencil, step `h`).
pub fn numeric_gradient<T, F>(f: &F, x: &Tensor<T>, h: T) -> Result<Tensor<T>>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>>,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        let d = five_point(
            |delta| {
                probe.data_mut()[i] = orig + delta;
                eval_scalar(f, &probe)
            },
            h,
        )?;
        probe.data_mut()[i] = orig;
        out.push(d);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Worst componentwise relative error between tape and finite-difference
/// gradients of `f` at `x`. The denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: T) -> Result<T>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = f(&tape, input)?;
    if out.value().len() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar output, got shape {:?}",
            out.value().shape()
        )));
    }
    let analytic = out.backward()?.wrt(&input);
    let numeric = numeric_gradient(&f, x, h)?;
    let floor = T::of(1e-8);
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(T::zero(), T::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::<f64>::from_f64(vec![4], &[0.3, -1.2, 2.0, 0.7]).unwrap();
        let err = grad_check(
            |tape, v| {
                let w = tape.constant(Tensor::from_f64(vec![4], &[1.0, -2.0, 0.5, 3.0])?);
                Ok(v.mul(&w)?.sum_all())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_scalar_output_rejected() {
        let x = Tensor::<f64>::ones(&[3]);
        assert!(matches!(grad_check(|_, v| Ok(v.square()), &x, 1e-5), Err(Error::Contract(_))));
    }
}
