use super::ParamBinder;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Which axes share a statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatLayout {
    /// `[n×d]`: one mean/variance per feature, over the batch axis.
    Features,
    /// `[N×C×H×W]`: one mean/variance per channel, over batch and spatial axes.
    Channels,
}

impl StatLayout {
    pub fn reduce_axes(self) -> &'static [usize] {
        match self {
            StatLayout::Features => &[0],
            StatLayout::Channels => &[0, 2, 3],
        }
    }

    fn check(self, shape: &[usize]) -> Result<usize> {
        match (self, shape.len()) {
            (StatLayout::Features, 2) | (StatLayout::Channels, 4) => Ok(shape[1]),
            _ => Err(Error::dim("batchnorm", format!("{self:?} layout with input {shape:?}"))),
        }
    }

    /// Number of values sharing one statistic.
    fn count(self, shape: &[usize]) -> usize {
        self.reduce_axes().iter().map(|&a| shape[a]).product()
    }
}

/// Batch-statistic normalization `x̂ = (x − μ) / √(σ² + ε)` with biased `σ²`.
///
/// Returns `x̂` and the batch mean and variance.
pub fn batch_normalize<'t, T: Scalar>(
    x: Var<'t, T>,
    layout: StatLayout,
    eps: T,
) -> Result<(Var<'t, T>, Tensor<T>, Tensor<T>)> {
    let shape = x.shape();
    layout.check(&shape)?;
    if layout.count(&shape) < 2 {
        return Err(Error::DegenerateBatch(format!("{} value(s) per statistic", layout.count(&shape))));
    }
    let axes = layout.reduce_axes();
    let mu = x.mean(axes)?;
    let centered = x.sub(&mu.expand(&shape, axes)?)?;
    let var = centered.square().mean(axes)?;
    let denom = var.shift(eps).sqrt()?;
    let xhat = centered.div(&denom.expand(&shape, axes)?)?;
    let (m, v) = (mu.value().clone(), var.value().clone());
    Ok((xhat, m, v))
}

/// Running estimates used in inference mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub eps: T,
    pub mode: Mode,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(features: usize) -> Self {
        RunningStats {
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::ones(&[features]),
            momentum: T::of(0.1),
            eps: T::of(1e-5),
            mode: Mode::Train,
        }
    }

    pub fn with_eps(mut self, eps: T) -> Result<Self> {
        if !(eps > T::zero()) {
            return Err(Error::Contract(format!("normalization eps must be positive, got {eps}")));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn with_momentum(mut self, momentum: T) -> Result<Self> {
        if !(momentum > T::zero() && momentum < T::one()) {
            return Err(Error::Contract(format!("running-stat momentum must lie in (0,1), got {momentum}")));
        }
        self.momentum = momentum;
        Ok(self)
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    /// `x̂` from batch statistics (train mode, updating the running estimates)
    /// or from the running estimates (inference mode).
    pub fn normalize<'t>(&mut self, x: Var<'t, T>, layout: StatLayout) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let d = layout.check(&shape)?;
        if d != self.features() {
            return Err(Error::dim("batchnorm", format!("{d} features/channels for state of {}", self.features())));
        }
        match self.mode {
            Mode::Train => {
                let (xhat, mean, var) = batch_normalize(x, layout, self.eps)?;
                let m = self.momentum;
                let keep = T::one() - m;
                for (r, b) in self.running_mean.data_mut().iter_mut().zip(mean.data()) {
                    *r = keep * *r + m * *b;
                }
                for (r, b) in self.running_var.data_mut().iter_mut().zip(var.data()) {
                    *r = keep * *r + m * *b;
                }
                Ok(xhat)
            }
            Mode::Inference => {
                let tape = x.tape();
                let axes = layout.reduce_axes();
                let mean = tape.constant(self.running_mean.clone()).expand(&shape, axes)?;
                let denom = tape.constant(self.running_var.map(|v| (v + self.eps).sqrt())).expand(&shape, axes)?;
                x.sub(&mean)?.div(&denom)
            }
        }
    }
}

/// Batch normalization with per-feature affine recovery `y = γ ⊙ x̂ + β`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: RunningStats<T>,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(features: usize) -> Self {
        BatchNormState { gamma: Tensor::ones(&[features]), beta: Tensor::zeros(&[features]), stats: RunningStats::new(features) }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.stats.mode = mode;
    }

    /// Fully-connected batch norm over `[n×d]`; returns `(x̂, y)`.
    pub fn forward<'t>(&mut self, binder: &mut ParamBinder<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        self.forward_layout(binder, x, StatLayout::Features)
    }

    /// Convolutional batch norm over `[N×C×H×W]`, statistics per channel; returns `(x̂, y)`.
    pub fn forward_conv<'t>(&mut self, binder: &mut ParamBinder<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        self.forward_layout(binder, x, StatLayout::Channels)
    }

    fn forward_layout<'t>(
        &mut self,
        binder: &mut ParamBinder<'t, T>,
        x: Var<'t, T>,
        layout: StatLayout,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let xhat = self.stats.normalize(x, layout)?;
        let y = affine(binder, &self.gamma, &self.beta, xhat, layout)?;
        Ok((xhat, y))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// `γ ⊙ x + β` with `γ, β` broadcast along the statistic axes.
pub(crate) fn affine<'t, T: Scalar>(
    binder: &mut ParamBinder<'t, T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    x: Var<'t, T>,
    layout: StatLayout,
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let axes = layout.reduce_axes();
    let g = binder.bind(gamma);
    let b = binder.bind(beta);
    x.mul(&g.expand(&shape, axes)?)?.add(&b.expand(&shape, axes)?)
}
