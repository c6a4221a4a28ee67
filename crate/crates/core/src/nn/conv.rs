use rand::Rng;

use super::{he_init, ParamBinder};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Conv2dGeometry, Tensor, Var};

/// Naive 2-D convolution (cross-correlation) layer over `N×C×H×W` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dLayer<T> {
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
    pub geometry: Conv2dGeometry,
}

impl<T: Scalar> Conv2dLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        let fan_in = in_channels * kernel * kernel;
        Ok(Conv2dLayer {
            kernels: he_init(&[out_channels, in_channels, kernel, kernel], fan_in, rng)?,
            bias: Tensor::zeros(&[out_channels]),
            geometry: Conv2dGeometry { stride, padding },
        })
    }

    pub fn from_parts(kernels: Tensor<T>, bias: Tensor<T>, geometry: Conv2dGeometry) -> Result<Self> {
        if kernels.rank() != 4 || bias.shape() != [kernels.shape()[0]] || geometry.stride == 0 {
            return Err(Error::dim("conv2d", format!("kernels {:?}, bias {:?}", kernels.shape(), bias.shape())));
        }
        Ok(Conv2dLayer { kernels, bias, geometry })
    }

    pub fn forward<'t>(&self, binder: &mut ParamBinder<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let k = binder.bind(&self.kernels);
        let b = binder.bind(&self.bias);
        x.conv2d(&k, Some(&b), self.geometry)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.kernels, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_kernel_is_identity() {
        let layer = Conv2dLayer::from_parts(
            Tensor::<f64>::ones(&[1, 1, 1, 1]),
            Tensor::zeros(&[1]),
            Conv2dGeometry { stride: 1, padding: 0 },
        )
        .unwrap();
        let tape = Tape::new();
        let x = Tensor::from_f64(vec![1, 1, 2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let mut b = ParamBinder::frozen(&tape);
        let y = layer.forward(&mut b, tape.constant(x.clone())).unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn gradient_check_with_padding_and_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = Conv2dLayer::<f64>::new(2, 3, 3, 2, 1, &mut rng).unwrap();
        let x = he_init(&[1, 2, 4, 4], 1, &mut rng).unwrap();
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
        let err = grad_check(
            |tape, k| {
                let xin = tape.constant(x.clone());
                let b = tape.constant(layer.bias.clone());
                Ok(xin.conv2d(&k, Some(&b), layer.geometry)?.square().sum_all())
            },
            &layer.kernels,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
