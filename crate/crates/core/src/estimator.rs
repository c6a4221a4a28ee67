//! Critic-network estimation of the Earth-Mover distance between the outputs
//! of two snapshots of a local network, with weight clipping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{DenseLayer, Mlp, ParamBinder};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// A frozen map from inputs `[N×d]` to features `[N×k]`.
pub trait LocalNetwork<T> {
    fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T, F> LocalNetwork<T> for F
where
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self(x)
    }
}

/// Blocks `0..=layer` of an MLP snapshot, evaluated in inference mode.
#[derive(Clone, Debug)]
pub struct MlpPrefix<T> {
    pub net: Mlp<T>,
    pub layer: usize,
}

impl<T: Scalar> LocalNetwork<T> for MlpPrefix<T> {
    fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.clone().layer_outputs(x, self.layer, 4096)
    }
}

/// How the critic parameters are updated from the ascent direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CriticUpdate {
    /// `w ← w + lr·g`.
    Plain,
    /// RMSProp-scaled ascent with decay `rho`.
    RmsProp { rho: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub clip: f64,
    pub lr: f64,
    pub update: CriticUpdate,
    pub hidden_widths: Vec<usize>,
    /// Squash the head through a sigmoid.
    pub sigmoid_head: bool,
    pub seed: u64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            iterations: 1500,
            batch_size: 128,
            clip: 0.01,
            lr: 5e-5,
            update: CriticUpdate::Plain,
            hidden_widths: vec![128, 128, 128],
            sigmoid_head: false,
            seed: 0,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Contract("critic iterations and batch size must be positive".into()));
        }
        if !(self.clip > 0.0) || !(self.lr > 0.0) {
            return Err(Error::Contract(format!("clip and lr must be positive, got {} and {}", self.clip, self.lr)));
        }
        if let CriticUpdate::RmsProp { rho } = self.update {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::Contract(format!("RMSProp decay must lie in [0,1), got {rho}")));
            }
        }
        Ok(())
    }
}

/// Scalar-output ReLU network `f_w`.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet<T> {
    pub layers: Vec<DenseLayer<T>>,
    pub sigmoid_head: bool,
}

impl<T: Scalar> CriticNet<T> {
    /// He-initialized, then clipped to `[−c, c]`.
    pub fn new<R: Rng + ?Sized>(inputs: usize, cfg: &CriticConfig, rng: &mut R) -> Result<Self> {
        let mut width = inputs;
        let mut layers = Vec::new();
        for &h in cfg.hidden_widths.iter().chain(std::iter::once(&1)) {
            layers.push(DenseLayer::new(width, h, rng)?);
            width = h;
        }
        let mut net = CriticNet { layers, sigmoid_head: cfg.sigmoid_head };
        net.clip(T::of(cfg.clip));
        Ok(net)
    }

    /// All parameters zero: a constant function.
    pub fn zeros(inputs: usize, cfg: &CriticConfig) -> Result<Self> {
        let mut width = inputs;
        let mut layers = Vec::new();
        for &h in cfg.hidden_widths.iter().chain(std::iter::once(&1)) {
            layers.push(DenseLayer::from_parts(Tensor::zeros(&[h, width]), Tensor::zeros(&[h]))?);
            width = h;
        }
        Ok(CriticNet { layers, sigmoid_head: cfg.sigmoid_head })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn forward<'t>(&self, binder: &mut ParamBinder<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(binder, h)?;
            if i < last {
                h = h.relu();
            }
        }
        Ok(if self.sigmoid_head { h.sigmoid() } else { h })
    }

    /// Critic values `f_w(x)` for every row of `x`.
    pub fn evaluate(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        let tape = Tape::new();
        let mut binder = ParamBinder::frozen(&tape);
        let out = self.forward(&mut binder, tape.constant(x.clone()))?;
        let values = out.value().data().to_vec();
        Ok(values)
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn clip(&mut self, c: T) {
        for p in self.params_mut() {
            for v in p.data_mut() {
                *v = v.max(-c).min(c);
            }
        }
    }

    /// Largest absolute parameter value.
    pub fn max_abs_weight(&self) -> T {
        self.params().map(|p| p.max_abs()).fold(T::zero(), T::max)
    }

    /// Upper bound on the Lipschitz constant: the product of the weight
    /// matrices' Frobenius norms (ReLU is 1-Lipschitz, the sigmoid ¼-Lipschitz).
    pub fn lipschitz_upper_bound(&self) -> T {
        let k = self
            .layers
            .iter()
            .map(|l| l.weight.data().iter().map(|&w| w * w).sum::<T>().sqrt())
            .fold(T::one(), |a, b| a * b);
        if self.sigmoid_head {
            k * T::of(0.25)
        } else {
            k
        }
    }
}

fn frozen_pair<T: Scalar>(
    f_old: &dyn LocalNetwork<T>,
    f_new: &dyn LocalNetwork<T>,
    data: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if data.rank() != 2 {
        return Err(Error::dim("critic", format!("data must be [N×d], got {:?}", data.shape())));
    }
    let (old, new) = (f_old.features(data)?, f_new.features(data)?);
    if old.shape() != new.shape() || old.rank() != 2 || old.shape()[0] != data.shape()[0] {
        return Err(Error::dim("critic", format!("snapshot outputs {:?} and {:?}", old.shape(), new.shape())));
    }
    Ok((old, new))
}

/// Stacks the rows `idx` of `new` above the same rows of `old`.
fn stacked<T: Scalar>(new: &Tensor<T>, old: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let k = new.shape()[1];
    let mut data = Vec::with_capacity(2 * idx.len() * k);
    for src in [new, old] {
        for &i in idx {
            data.extend_from_slice(src.row(i));
        }
    }
    Tensor::new(vec![2 * idx.len(), k], data)
}

/// Trains a critic to maximize `mean f_w(f_new(x)) − mean f_w(f_old(x))`.
pub fn train_critic<T: Scalar>(
    f_old: &dyn LocalNetwork<T>,
    f_new: &dyn LocalNetwork<T>,
    data: &Tensor<T>,
    cfg: &CriticConfig,
) -> Result<CriticNet<T>> {
    train_critic_observed(f_old, f_new, data, cfg, |_, _| {})
}

/// [`train_critic`], calling `observe(step, critic)` after every clipped update.
pub fn train_critic_observed<T: Scalar>(
    f_old: &dyn LocalNetwork<T>,
    f_new: &dyn LocalNetwork<T>,
    data: &Tensor<T>,
    cfg: &CriticConfig,
    mut observe: impl FnMut(usize, &CriticNet<T>),
) -> Result<CriticNet<T>> {
    cfg.validate()?;
    let (old, new) = frozen_pair(f_old, f_new, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut critic = CriticNet::new(new.shape()[1], cfg, &mut rng)?;
    let n = data.shape()[0];
    let b = cfg.batch_size;
    let (lr, clip) = (T::of(cfg.lr), T::of(cfg.clip));
    let mut second_moment: Vec<Tensor<T>> = critic.params().map(|p| Tensor::zeros(p.shape())).collect();
    for step in 0..cfg.iterations {
        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let x = stacked(&new, &old, &idx)?;
        let tape = Tape::new();
        let mut binder = ParamBinder::trainable(&tape);
        let out = critic.forward(&mut binder, tape.constant(x))?;
        let mut sign = vec![T::one() / T::of(b as f64); b];
        sign.extend(std::iter::repeat_n(-T::one() / T::of(b as f64), b));
        let objective = out.mul(&tape.constant(Tensor::new(vec![2 * b, 1], sign)?))?.sum_all();
        let value = objective.value().data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged(format!("critic objective became {value} at step {step}")));
        }
        let grads = binder.gradients(&objective.backward()?);
        for ((p, g), s) in critic.params_mut().into_iter().zip(&grads).zip(&mut second_moment) {
            match cfg.update {
                CriticUpdate::Plain => {
                    for (w, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *w = *w + lr * gi;
                    }
                }
                CriticUpdate::RmsProp { rho } => {
                    let rho = T::of(rho);
                    let tiny = T::of(1e-8);
                    for ((w, &gi), si) in p.data_mut().iter_mut().zip(g.data()).zip(s.data_mut()) {
                        *si = rho * *si + (T::one() - rho) * gi * gi;
                        *w = *w + lr * gi / (si.sqrt() + tiny);
                    }
                }
            }
        }
        critic.clip(clip);
        observe(step, &critic);
    }
    Ok(critic)
}

/// Mean critic difference over held-out data, in units of `K·W` for the
/// critic's unknown Lipschitz constant `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmEstimate {
    pub value: f64,
    /// Standard error of the difference of the two means, each estimated
    /// from the test set as an independent sample.
    pub std_error: f64,
    pub layer: usize,
    pub pair: (usize, usize),
}

impl EmEstimate {
    pub fn tagged(self, layer: usize, pair: (usize, usize)) -> Self {
        EmEstimate { layer, pair, ..self }
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

pub fn estimate_em<T: Scalar>(
    critic: &CriticNet<T>,
    f_old: &dyn LocalNetwork<T>,
    f_new: &dyn LocalNetwork<T>,
    test: &Tensor<T>,
) -> Result<EmEstimate> {
    if test.rank() != 2 || test.shape()[0] == 0 {
        return Err(Error::DegenerateInput("empty test set".into()));
    }
    let (old, new) = frozen_pair(f_old, f_new, test)?;
    let to_f64 = |v: Vec<T>| v.into_iter().map(Scalar::as_f64).collect::<Vec<f64>>();
    let a = to_f64(critic.evaluate(&new)?);
    let b = to_f64(critic.evaluate(&old)?);
    let n = a.len() as f64;
    let value = a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / n;
    let ((_, va), (_, vb)) = (mean_var(&a), mean_var(&b));
    if !value.is_finite() {
        return Err(Error::Diverged("critic estimate is not finite".into()));
    }
    Ok(EmEstimate { value, std_error: ((va + vb) / n).sqrt(), layer: 0, pair: (0, 0) })
}

/// Arithmetic mean of per-layer estimates.
pub fn average_deep_layer_distance(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DegenerateInput("no layer estimates to average".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
