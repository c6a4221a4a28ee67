//! Unitization transforms and the composite normalization layers built on them.

use crate::error::{Error, Result};
use crate::nn::{ParamBinder, RunningStats, StatLayout};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

fn norm<T: Scalar>(x: &[T]) -> T {
    x.iter().map(|&v| v * v).sum::<T>().sqrt()
}

fn check_unit_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::Contract(format!("alpha must lie in [0,1], got {alpha}")));
    }
    Ok(())
}

/// The first standard basis vector, used as the image of the zero vector.
pub fn default_pole<T: Scalar>(d: usize) -> Vec<T> {
    let mut c = vec![T::zero(); d];
    if let Some(first) = c.first_mut() {
        *first = T::one();
    }
    c
}

/// `x / ‖x‖`, or `c` when `x = 0`.
pub fn vanilla_unitize<T: Scalar>(x: &[T], c: &[T]) -> Result<Vec<T>> {
    if x.len() != c.len() {
        return Err(Error::dim("vanilla_unitize", format!("x has {} entries, c has {}", x.len(), c.len())));
    }
    if (norm(c) - T::one()).abs() > T::of(1e-9) {
        return Err(Error::Contract("pole vector c must have unit norm".into()));
    }
    let n = norm(x);
    if n == T::zero() {
        return Ok(c.to_vec());
    }
    Ok(x.iter().map(|&v| v / n).collect())
}

/// `x / (α‖x‖ + 1 − α)`, or `c` when `x = 0` and `α = 1`.
pub fn partial_unitize<T: Scalar>(x: &[T], alpha: T, c: &[T]) -> Result<Vec<T>> {
    check_unit_alpha(alpha)?;
    let n = norm(x);
    if n == T::zero() && alpha == T::one() {
        return vanilla_unitize(x, c);
    }
    let denom = alpha * n + T::one() - alpha;
    Ok(x.iter().map(|&v| v / denom).collect())
}

/// Componentwise `xᵢ / (αᵢ(‖x‖ − 1) + 1)`, or `0` when `x = 0`.
pub fn general_unitize<T: Scalar>(x: &[T], alpha: &[T]) -> Result<Vec<T>> {
    if x.len() != alpha.len() {
        return Err(Error::dim("general_unitize", format!("x has {} entries, alpha has {}", x.len(), alpha.len())));
    }
    for &a in alpha {
        check_unit_alpha(a)?;
    }
    let n = norm(x);
    if n == T::zero() {
        return Ok(vec![T::zero(); x.len()]);
    }
    Ok(x.iter().zip(alpha).map(|(&v, &a)| v / (a * (n - T::one()) + T::one())).collect())
}

/// Trainable parameters of the practical transform.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitizationParams<T> {
    pub alpha: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: T,
}

impl<T: Scalar> UnitizationParams<T> {
    /// `α = 0`, `γ = 1`, `β = 0`, `ε = 1e-5`.
    pub fn new(features: usize) -> Self {
        UnitizationParams {
            alpha: Tensor::zeros(&[features]),
            gamma: Tensor::ones(&[features]),
            beta: Tensor::zeros(&[features]),
            eps: T::of(1e-5),
        }
    }

    pub fn with_eps(mut self, eps: T) -> Result<Self> {
        if !(eps > T::zero()) {
            return Err(Error::Contract(format!("unitization eps must be positive, got {eps}")));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn features(&self) -> usize {
        self.alpha.len()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.alpha, &mut self.gamma, &mut self.beta]
    }

    fn bind<'t>(&self, binder: &mut ParamBinder<'t, T>) -> [Var<'t, T>; 3] {
        [binder.bind(&self.alpha), binder.bind(&self.gamma), binder.bind(&self.beta)]
    }
}

/// Projects every `α` component into `[0, 1]`.
pub fn clamp_alpha<T: Scalar>(params: &mut UnitizationParams<T>) {
    for a in params.alpha.data_mut() {
        *a = a.max(T::zero()).min(T::one());
    }
}

/// `[p α + (1 − α)] ⊙ x̂` written as `α(p − 1) + 1` so that `α = 0` gives an exact factor of one.
fn interpolate<'t, T: Scalar>(xhat: Var<'t, T>, p: Var<'t, T>, alpha: Var<'t, T>) -> Result<Var<'t, T>> {
    alpha.mul(&p.shift(-T::one()))?.shift(T::one()).mul(&xhat)
}

/// Per-sample practical unitization of `x̂ [n×d]` followed by `γ ⊙ · + β`.
pub fn unitization_forward<'t, T: Scalar>(
    binder: &mut ParamBinder<'t, T>,
    params: &UnitizationParams<T>,
    xhat: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let shape = xhat.shape();
    if shape.len() != 2 || shape[1] != params.features() {
        return Err(Error::dim("unitization", format!("input {shape:?} for {} features", params.features())));
    }
    let [alpha, gamma, beta] = params.bind(binder);
    practical(xhat, alpha, gamma, beta, params.eps)
}

fn practical<'t, T: Scalar>(
    xhat: Var<'t, T>,
    alpha: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: T,
) -> Result<Var<'t, T>> {
    let shape = xhat.shape();
    let norm = xhat.square().sum(&[1])?.shift(eps).sqrt()?;
    let p = xhat.tape().constant(Tensor::ones(&[shape[0]])).div(&norm)?.expand(&shape, &[1])?;
    let xbar = interpolate(xhat, p, alpha.expand(&shape, &[0])?)?;
    xbar.mul(&gamma.expand(&shape, &[0])?)?.add(&beta.expand(&shape, &[0])?)
}

/// Batch normalization without affine, then the practical unitization.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitizationLayer<T> {
    pub stats: RunningStats<T>,
    pub params: UnitizationParams<T>,
}

impl<T: Scalar> UnitizationLayer<T> {
    pub fn new(features: usize) -> Self {
        UnitizationLayer { stats: RunningStats::new(features), params: UnitizationParams::new(features) }
    }

    /// Returns `(x̂, y)`.
    pub fn forward<'t>(&mut self, binder: &mut ParamBinder<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let xhat = self.stats.normalize(x, StatLayout::Features)?;
        let y = unitization_forward(binder, &self.params, xhat)?;
        Ok((xhat, y))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params.params_mut()
    }
}

/// Norm scaling for the convolutional variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvUnitizationConfig<T> {
    /// Divides the per-image squared norm together with `H·W`.
    pub n_hyper: T,
    pub eps: T,
}

impl<T: Scalar> ConvUnitizationConfig<T> {
    pub fn new(n_hyper: T, eps: T) -> Result<Self> {
        if !(n_hyper > T::zero()) || !(eps > T::zero()) {
            return Err(Error::Contract(format!("n_hyper and eps must be positive, got {n_hyper} and {eps}")));
        }
        Ok(ConvUnitizationConfig { n_hyper, eps })
    }

    /// `n_hyper = H·W`, `ε = 1e-5`.
    pub fn default_for(h: usize, w: usize) -> Self {
        ConvUnitizationConfig { n_hyper: T::of((h * w) as f64), eps: T::of(1e-5) }
    }
}

/// Practical unitization of a per-channel normalized feature map `x̂ [N×C×H×W]`.
///
/// Each image is one sample: `s = Σ x̂² / (n_hyper·H·W)`, `p = 1/√(s + ε)`, then
/// per-channel `α`, `γ`, `β`. `params.eps` is unused here; `config.eps` applies.
pub fn conv_unitization_forward<'t, T: Scalar>(
    binder: &mut ParamBinder<'t, T>,
    config: &ConvUnitizationConfig<T>,
    params: &UnitizationParams<T>,
    xhat: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let shape = xhat.shape();
    if shape.len() != 4 || shape[1] != params.features() {
        return Err(Error::dim("conv_unitization", format!("input {shape:?} for {} channels", params.features())));
    }
    let [alpha, gamma, beta] = params.bind(binder);
    let tape = binder.tape();
    let pixels = T::of((shape[2] * shape[3]) as f64);
    let per_image = [1, 2, 3];
    let channel = [0, 2, 3];
    let s = xhat.square().sum(&per_image)?.scale(T::one() / (config.n_hyper * pixels));
    let root = s.shift(config.eps).sqrt()?;
    let p = tape.constant(Tensor::ones(&[shape[0]])).div(&root)?.expand(&shape, &per_image)?;
    let xbar = interpolate(xhat, p, alpha.expand(&shape, &channel)?)?;
    xbar.mul(&gamma.expand(&shape, &channel)?)?.add(&beta.expand(&shape, &channel)?)
}

/// Per-channel batch normalization without affine, then the convolutional unitization.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvUnitizationLayer<T> {
    pub stats: RunningStats<T>,
    pub params: UnitizationParams<T>,
    pub config: ConvUnitizationConfig<T>,
}

impl<T: Scalar> ConvUnitizationLayer<T> {
    pub fn new(channels: usize, config: ConvUnitizationConfig<T>) -> Self {
        ConvUnitizationLayer { stats: RunningStats::new(channels), params: UnitizationParams::new(channels), config }
    }

    pub fn forward<'t>(&mut self, binder: &mut ParamBinder<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let xhat = self.stats.normalize(x, StatLayout::Channels)?;
        let y = conv_unitization_forward(binder, &self.config, &self.params, xhat)?;
        Ok((xhat, y))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use crate::nn::Mode;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn vanilla_cases() {
        let c = default_pole::<f64>(2);
        assert!(close(&vanilla_unitize(&[3., 4.], &c).unwrap(), &[0.6, 0.8]));
        assert_eq!(vanilla_unitize(&[0., 0.], &c).unwrap(), vec![1., 0.]);
        let u = [0.6, -0.8];
        assert!(close(&vanilla_unitize(&u, &c).unwrap(), &u));
        assert!(matches!(vanilla_unitize(&[1., 1.], &[1., 1.]), Err(Error::Contract(_))));
    }

    #[test]
    fn partial_cases() {
        let c = default_pole::<f64>(2);
        assert_eq!(partial_unitize(&[3., 4.], 0.0, &c).unwrap(), vec![3., 4.]);
        assert!(close(&partial_unitize(&[3., 4.], 1.0, &c).unwrap(), &[0.6, 0.8]));
        assert!(close(&partial_unitize(&[3., 4.], 0.5, &c).unwrap(), &[1.0, 4.0 / 3.0]));
        assert_eq!(partial_unitize(&[0., 0.], 1.0, &c).unwrap(), vec![1., 0.]);
        assert!(partial_unitize(&[1., 0.], 1.5, &c).is_err());
        assert!(partial_unitize(&[1., 0.], -0.1, &c).is_err());
    }

    #[test]
    fn general_cases() {
        assert_eq!(general_unitize(&[3., 4.], &[0., 0.]).unwrap(), vec![3., 4.]);
        assert!(close(&general_unitize(&[3., 4.], &[1., 1.]).unwrap(), &[0.6, 0.8]));
        assert!(close(&general_unitize(&[3., 4.], &[1., 0.]).unwrap(), &[0.6, 4.0]));
        assert_eq!(general_unitize(&[0., 0.], &[1., 0.5]).unwrap(), vec![0., 0.]);
        assert!(general_unitize(&[1., 0.], &[0.5, 1.2]).is_err());
    }

    fn practical_of(alpha: f64, eps: f64, x: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let mut params = UnitizationParams::<f64>::new(x.len());
        params.alpha = Tensor::full(&[x.len()], alpha);
        params.eps = eps;
        let mut b = ParamBinder::frozen(&tape);
        let y = unitization_forward(&mut b, &params, tape.constant(t(&[1, x.len()], x))).unwrap();
        let out = y.value().data().to_vec();
        out
    }

    #[test]
    fn practical_cases() {
        assert_eq!(practical_of(0.0, 1e-5, &[3., 4.]), vec![3., 4.]);
        // ε far below the resolution of ‖x̂‖² = 25
        assert!(close(&practical_of(1.0, 1e-300, &[3., 4.]), &[0.6, 0.8]));
        assert!(close(&practical_of(0.5, 1e-300, &[3., 4.]), &[1.8, 2.4]));
    }

    #[test]
    fn conv_trace() {
        let tape = Tape::new();
        let params = UnitizationParams::<f64>::new(1);
        let mut params = params;
        params.alpha = t(&[1], &[0.7]);
        let cfg = ConvUnitizationConfig { n_hyper: 4.0, eps: 1e-300 };
        let mut b = ParamBinder::frozen(&tape);
        let xhat = tape.constant(Tensor::full(&[1, 1, 2, 2], 2.0));
        let y = conv_unitization_forward(&mut b, &cfg, &params, xhat).unwrap();
        assert_eq!(y.value().data(), &[2.0; 4]);
    }

    #[test]
    fn conv_alpha_zero_is_plain_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tape = Tape::new();
        let mut params = UnitizationParams::<f64>::new(3);
        params.gamma = t(&[3], &[2.0, -1.0, 0.5]);
        params.beta = t(&[3], &[0.1, 0.2, 0.3]);
        let cfg = ConvUnitizationConfig::default_for(2, 2);
        let mut b = ParamBinder::frozen(&tape);
        let y = conv_unitization_forward(&mut b, &cfg, &params, tape.constant(t(&[2, 3, 2, 2], &data))).unwrap();
        for (i, (&yv, &xv)) in y.value().data().iter().zip(&data).enumerate() {
            let c = (i / 4) % 3;
            assert_eq!(yv, params.gamma.data()[c] * xv + params.beta.data()[c]);
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let tape = Tape::new();
        let params = UnitizationParams::<f64>::new(2);
        let cfg = ConvUnitizationConfig::default_for(2, 2);
        let mut b = ParamBinder::frozen(&tape);
        let x = tape.constant(Tensor::zeros(&[1, 3, 2, 2]));
        assert!(matches!(conv_unitization_forward(&mut b, &cfg, &params, x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn clamp_projects() {
        let mut p = UnitizationParams::<f64>::new(3);
        p.alpha = t(&[3], &[-0.2, 0.5, 1.7]);
        clamp_alpha(&mut p);
        assert_eq!(p.alpha.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn layer_defaults_and_inference() {
        let mut layer = UnitizationLayer::<f64>::new(4);
        assert!(layer.params.alpha.data().iter().all(|&a| a == 0.0));
        assert!(layer.params.gamma.data().iter().all(|&g| g == 1.0));
        let tape = Tape::new();
        let mut b = ParamBinder::frozen(&tape);
        let x = tape.constant(t(&[3, 4], &[1., 2., 3., 4., 0., 1., 0., 1., 5., 5., 5., 5.]));
        let (xhat, y) = layer.forward(&mut b, x).unwrap();
        assert_eq!(*xhat.value(), *y.value());
        layer.stats.mode = Mode::Inference;
        let one = tape.constant(t(&[1, 4], &[1., 2., 3., 4.]));
        assert!(layer.forward(&mut b, one).is_ok());
    }

    #[test]
    fn gradient_checks_all_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..4 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = t(&[4, 3], &xs);
        let mut params = UnitizationParams::<f64>::new(3);
        params.alpha = t(&[3], &[0.3, 0.6, 0.9]);
        params.gamma = t(&[3], &[1.2, 0.8, -0.5]);
        params.beta = t(&[3], &[0.1, -0.1, 0.2]);
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights = t(&[4, 3], &w);
        let err = grad_check(
            |tape, v| {
                let mut b = ParamBinder::frozen(tape);
                unitization_forward(&mut b, &params, v)?.mul(&tape.constant(weights.clone())).map(|o| o.sum_all())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "x̂: {err}");
        let tensors = [params.alpha.clone(), params.gamma.clone(), params.beta.clone()];
        for which in 0..3 {
            let err = grad_check(
                |tape, v| {
                    let mut vars = tensors.iter().map(|p| tape.constant(p.clone())).collect::<Vec<_>>();
                    vars[which] = v;
                    let y = practical(tape.constant(x.clone()), vars[0], vars[1], vars[2], params.eps)?;
                    y.mul(&tape.constant(weights.clone())).map(|o| o.sum_all())
                },
                &tensors[which],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "param {which}: {err}");
        }
    }
}
