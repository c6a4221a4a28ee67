use rand::Rng;

use super::{he_init, ParamBinder};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Fully-connected layer computing `x Wᵀ + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    /// He-initialized weights, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        Ok(DenseLayer { weight: he_init(&[outputs, inputs], inputs, rng)?, bias: Tensor::zeros(&[outputs]) })
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::dim("dense", format!("weight {:?}, bias {:?}", weight.shape(), bias.shape())));
        }
        Ok(DenseLayer { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward<'t>(&self, binder: &mut ParamBinder<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.inputs() {
            return Err(Error::dim("dense", format!("input {shape:?} for {} inputs", self.inputs())));
        }
        let w = binder.bind(&self.weight);
        let b = binder.bind(&self.bias);
        let xw = x.matmul(&w.transpose()?)?;
        xw.add(&b.expand(&[shape[0], self.outputs()], &[0])?)
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_through() {
        let layer = DenseLayer::from_parts(
            Tensor::<f64>::from_f64(vec![2, 2], &[1., 0., 0., 1.]).unwrap(),
            Tensor::zeros(&[2]),
        )
        .unwrap();
        let tape = Tape::new();
        let mut b = ParamBinder::frozen(&tape);
        let x = tape.constant(Tensor::from_f64(vec![2, 2], &[1., -2., 3., 0.5]).unwrap());
        assert_eq!(layer.forward(&mut b, x).unwrap().value().data(), &[1., -2., 3., 0.5]);
    }

    #[test]
    fn hand_evaluated_output() {
        let layer = DenseLayer::from_parts(
            Tensor::<f64>::from_f64(vec![1, 2], &[1., 1.]).unwrap(),
            Tensor::from_f64(vec![1], &[1.]).unwrap(),
        )
        .unwrap();
        let tape = Tape::new();
        let mut b = ParamBinder::frozen(&tape);
        let x = tape.constant(Tensor::from_f64(vec![1, 2], &[2., 3.]).unwrap());
        assert_eq!(layer.forward(&mut b, x).unwrap().value().data(), &[6.]);
    }

    #[test]
    fn gradient_check_input_and_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = DenseLayer::<f64>::new(3, 2, &mut rng).unwrap();
        let x = he_init(&[4, 3], 1, &mut rng).unwrap();
        let err = grad_check(
            |tape, v| {
                let mut b = ParamBinder::frozen(tape);
                Ok(layer.forward(&mut b, v)?.square().sum_all())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
        let w = layer.weight.clone();
        let err = grad_check(
            |tape, wv| {
                let xin = tape.constant(x.clone());
                let b = tape.constant(layer.bias.clone());
                xin.matmul(&wv.transpose()?)?.add(&b.expand(&[4, 2], &[0])?).map(|o| o.square().sum_all())
            },
            &w,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn input_width_mismatch() {
        let layer = DenseLayer::<f64>::new(3, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let tape = Tape::new();
        let mut b = ParamBinder::frozen(&tape);
        let x = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(layer.forward(&mut b, x), Err(Error::Dimension { .. })));
    }
}
