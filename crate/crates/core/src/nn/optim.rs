use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mini-batch SGD with (optionally Nesterov) momentum, L2 weight decay and a
/// step schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig<T> {
    pub lr: T,
    pub momentum_coef: T,
    pub nesterov: bool,
    pub weight_decay: T,
    /// 1-based epochs at which the learning rate is multiplied by `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: T,
}

impl<T: Scalar> Default for SgdConfig<T> {
    fn default() -> Self {
        SgdConfig {
            lr: T::of(0.05),
            momentum_coef: T::of(0.9),
            nesterov: true,
            weight_decay: T::of(5e-4),
            milestones: vec![61, 121, 161],
            decay_factor: T::of(0.2),
        }
    }
}

impl<T: Scalar> SgdConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > T::zero()) {
            return Err(Error::Contract(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.momentum_coef >= T::zero() && self.momentum_coef < T::one()) {
            return Err(Error::Contract(format!("momentum must lie in [0,1), got {}", self.momentum_coef)));
        }
        if self.weight_decay < T::zero() {
            return Err(Error::Contract("weight decay must be non-negative".into()));
        }
        if !(self.decay_factor > T::zero() && self.decay_factor < T::one()) {
            return Err(Error::Contract(format!("decay factor must lie in (0,1), got {}", self.decay_factor)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract(format!("milestones must be strictly increasing: {:?}", self.milestones)));
        }
        Ok(())
    }
}

/// `base · decay^(#milestones ≤ epoch)`.
pub fn lr_at_epoch<T: Scalar>(config: &SgdConfig<T>, epoch: usize) -> T {
    let passed = config.milestones.iter().filter(|&&m| m <= epoch).count();
    (0..passed).fold(config.lr, |lr, _| lr * config.decay_factor)
}

/// Optimizer state: one velocity buffer per parameter.
#[derive(Clone, Debug, Default)]
pub struct Sgd<T> {
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new() -> Self {
        Sgd { velocity: Vec::new() }
    }

    /// One update with learning rate `lr`:
    /// `v ← m·v + g + wd·θ`, `θ ← θ − lr·(g + wd·θ + m·v)` (Nesterov) or `θ ← θ − lr·v`.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], config: &SgdConfig<T>, lr: T) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Contract("parameter count changed between steps".into()));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() {
                return Err(Error::dim("sgd", format!("param {:?}, grad {:?}", p.shape(), g.shape())));
            }
            for ((theta, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let grad = gi + config.weight_decay * *theta;
                *vi = config.momentum_coef * *vi + grad;
                let update = if config.nesterov { grad + config.momentum_coef * *vi } else { *vi };
                *theta = *theta - lr * update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(m: f64, wd: f64) -> SgdConfig<f64> {
        SgdConfig { lr: 1.0, momentum_coef: m, nesterov: false, weight_decay: wd, milestones: vec![], decay_factor: 0.2 }
    }

    #[test]
    fn no_momentum_is_plain_descent() {
        let mut p = Tensor::<f64>::vector(vec![1.0, 2.0]);
        let g = Tensor::vector(vec![0.5, -1.0]);
        let mut opt = Sgd::new();
        opt.step(&mut [&mut p], &[g], &plain(0.0, 0.0), 0.1).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.05, 2.0 + 0.1]);
    }

    #[test]
    fn momentum_recursion() {
        let mut p = Tensor::<f64>::vector(vec![0.0]);
        let g = Tensor::vector(vec![1.0]);
        let mut opt = Sgd::new();
        let cfg = plain(0.9, 0.0);
        opt.step(&mut [&mut p], &[g.clone()], &cfg, 1.0).unwrap();
        assert_eq!(p.data(), &[-1.0]);
        opt.step(&mut [&mut p], &[g], &cfg, 1.0).unwrap();
        assert!((p.data()[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks_geometrically() {
        let mut p = Tensor::<f64>::vector(vec![2.0]);
        let mut opt = Sgd::new();
        let cfg = plain(0.0, 0.1);
        for k in 1..=3 {
            opt.step(&mut [&mut p], &[Tensor::zeros(&[1])], &cfg, 0.5).unwrap();
            assert!((p.data()[0] - 2.0 * 0.95f64.powi(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = Tensor::<f64>::vector(vec![0.3, -0.7]);
        let mut opt = Sgd::new();
        let cfg = SgdConfig { weight_decay: 0.0, ..SgdConfig::default() };
        for _ in 0..3 {
            opt.step(&mut [&mut p], &[Tensor::zeros(&[2])], &cfg, 0.05).unwrap();
        }
        assert_eq!(p.data(), &[0.3, -0.7]);
    }

    #[test]
    fn nesterov_first_step() {
        let mut p = Tensor::<f64>::vector(vec![0.0]);
        let mut opt = Sgd::new();
        let cfg = SgdConfig { lr: 1.0, momentum_coef: 0.9, nesterov: true, weight_decay: 0.0, ..SgdConfig::default() };
        opt.step(&mut [&mut p], &[Tensor::vector(vec![1.0])], &cfg, 1.0).unwrap();
        assert!((p.data()[0] + 1.9).abs() < 1e-15);
    }

    #[test]
    fn step_schedule() {
        let cfg = SgdConfig::<f64>::default();
        assert_eq!(lr_at_epoch(&cfg, 1), 0.05);
        assert!((lr_at_epoch(&cfg, 60) - 0.05).abs() < 1e-18);
        assert!((lr_at_epoch(&cfg, 61) - 0.01).abs() < 1e-15);
        assert!((lr_at_epoch(&cfg, 161) - 0.0004).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SgdConfig::<f64>::default();
        cfg.milestones = vec![5, 5];
        assert!(cfg.validate().is_err());
        let cfg = SgdConfig::<f64> { momentum_coef: 1.0, ..SgdConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(SgdConfig::<f64>::default().validate().is_ok());
    }
}
