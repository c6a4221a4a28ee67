use rand::{Rng, SeedableRng};

use super::{BatchNormState, Checkpoint, DenseLayer, Mode, ParamBinder, Sgd, SgdConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::unitization::{clamp_alpha, UnitizationLayer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    None,
    BatchNorm,
    Unitization,
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormKind::None => "none",
            NormKind::BatchNorm => "bn",
            NormKind::Unitization => "unitization",
        })
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormKind::None),
            "bn" => Ok(NormKind::BatchNorm),
            "unitization" => Ok(NormKind::Unitization),
            other => Err(Error::Format(format!("unknown norm kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Norm<T> {
    None,
    BatchNorm(BatchNormState<T>),
    Unitization(UnitizationLayer<T>),
}

impl<T: Scalar> Norm<T> {
    fn new(kind: NormKind, features: usize) -> Self {
        match kind {
            NormKind::None => Norm::None,
            NormKind::BatchNorm => Norm::BatchNorm(BatchNormState::new(features)),
            NormKind::Unitization => Norm::Unitization(UnitizationLayer::new(features)),
        }
    }

    pub fn kind(&self) -> NormKind {
        match self {
            Norm::None => NormKind::None,
            Norm::BatchNorm(_) => NormKind::BatchNorm,
            Norm::Unitization(_) => NormKind::Unitization,
        }
    }

    /// Returns `(x̂, y)`; without normalization both are the input.
    fn forward<'t>(&mut self, binder: &mut ParamBinder<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        match self {
            Norm::None => Ok((x, x)),
            Norm::BatchNorm(bn) => bn.forward(binder, x),
            Norm::Unitization(u) => u.forward(binder, x),
        }
    }

    fn set_mode(&mut self, mode: Mode) {
        match self {
            Norm::None => {}
            Norm::BatchNorm(bn) => bn.stats.mode = mode,
            Norm::Unitization(u) => u.stats.mode = mode,
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Norm::None => Vec::new(),
            Norm::BatchNorm(bn) => bn.params_mut(),
            Norm::Unitization(u) => u.params_mut(),
        }
    }

    /// Every stored tensor with its short name, trainable or not.
    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Norm::None => Vec::new(),
            Norm::BatchNorm(bn) => vec![
                ("gamma", &mut bn.gamma),
                ("beta", &mut bn.beta),
                ("running_mean", &mut bn.stats.running_mean),
                ("running_var", &mut bn.stats.running_var),
            ],
            Norm::Unitization(u) => vec![
                ("alpha", &mut u.params.alpha),
                ("gamma", &mut u.params.gamma),
                ("beta", &mut u.params.beta),
                ("running_mean", &mut u.stats.running_mean),
                ("running_var", &mut u.stats.running_var),
            ],
        }
    }
}

/// Dense layer, optional normalization, ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub dense: DenseLayer<T>,
    pub norm: Norm<T>,
}

/// Layer widths with one normalization kind per hidden block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub norms: Vec<NormKind>,
}

impl MlpSpec {
    /// Every hidden block normalized with `norm`.
    pub fn uniform(inputs: usize, hidden: Vec<usize>, classes: usize, norm: NormKind) -> Self {
        let norms = vec![norm; hidden.len()];
        MlpSpec { inputs, hidden, classes, norms }
    }

    /// 784 → 4×64 → 8 → 10.
    pub fn desk(norm: NormKind) -> Self {
        Self::uniform(784, vec![64, 64, 64, 64, 8], 10, norm)
    }

    /// 784 → 10×100 → 8 → 10.
    pub fn full(norm: NormKind) -> Self {
        let mut hidden = vec![100; 10];
        hidden.push(8);
        Self::uniform(784, hidden, 10, norm)
    }
}

/// Intermediate values of one forward pass.
pub struct Trace<'t, T> {
    pub logits: Var<'t, T>,
    /// Per block, the normalized pre-affine values (the dense output when un-normalized).
    pub normalized: Vec<Var<'t, T>>,
    /// Per block, the normalization output before the ReLU.
    pub outputs: Vec<Var<'t, T>>,
}

/// Fully-connected classifier used by the experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub blocks: Vec<Block<T>>,
    pub head: DenseLayer<T>,
}

impl<T: Scalar> Mlp<T> {
    /// He-initialized; the random stream depends only on the layer widths, so
    /// specs differing only in `norm` draw identical weights from one seed.
    pub fn new<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        if spec.hidden.is_empty() {
            return Err(Error::Contract("an MLP needs at least one hidden block".into()));
        }
        if spec.norms.len() != spec.hidden.len() {
            return Err(Error::Contract(format!(
                "{} normalization kinds for {} hidden blocks",
                spec.norms.len(),
                spec.hidden.len()
            )));
        }
        let mut width = spec.inputs;
        let mut blocks = Vec::with_capacity(spec.hidden.len());
        for (&h, &kind) in spec.hidden.iter().zip(&spec.norms) {
            blocks.push(Block { dense: DenseLayer::new(width, h, rng)?, norm: Norm::new(kind, h) });
            width = h;
        }
        let head = DenseLayer::new(width, spec.classes, rng)?;
        Ok(Mlp { blocks, head })
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec {
            inputs: self.blocks[0].dense.inputs(),
            hidden: self.blocks.iter().map(|b| b.dense.outputs()).collect(),
            classes: self.head.outputs(),
            norms: self.blocks.iter().map(|b| b.norm.kind()).collect(),
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for b in &mut self.blocks {
            b.norm.set_mode(mode);
        }
    }

    pub fn forward<'t>(&mut self, binder: &mut ParamBinder<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.trace(binder, x)?.logits)
    }

    pub fn trace<'t>(&mut self, binder: &mut ParamBinder<'t, T>, x: Var<'t, T>) -> Result<Trace<'t, T>> {
        let mut h = x;
        let mut normalized = Vec::with_capacity(self.blocks.len());
        let mut outputs = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let z = b.dense.forward(binder, h)?;
            let (xhat, y) = b.norm.forward(binder, z)?;
            normalized.push(xhat);
            outputs.push(y);
            h = y.relu();
        }
        let logits = self.head.forward(binder, h)?;
        Ok(Trace { logits, normalized, outputs })
    }

    /// Output of block `layer`'s normalization (pre-ReLU): the local network `f_{1:l}`.
    pub fn forward_to<'t>(&mut self, binder: &mut ParamBinder<'t, T>, x: Var<'t, T>, layer: usize) -> Result<Var<'t, T>> {
        if layer >= self.blocks.len() {
            return Err(Error::Contract(format!("layer {layer} out of range for {} blocks", self.blocks.len())));
        }
        let mut h = x;
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let z = b.dense.forward(binder, h)?;
            let (_, y) = b.norm.forward(binder, z)?;
            if i == layer {
                return Ok(y);
            }
            h = y.relu();
        }
        unreachable!("layer index checked above")
    }

    /// Evaluates `forward_to` in inference mode over `x [N×d]`, in chunks.
    pub fn layer_outputs(&mut self, x: &Tensor<T>, layer: usize, chunk: usize) -> Result<Tensor<T>> {
        self.map_chunks(x, chunk, |net, binder, v| net.forward_to(binder, v, layer))
    }

    /// Pre-affine normalized values `x̂` of block `layer` in inference mode.
    pub fn normalized_outputs(&mut self, x: &Tensor<T>, layer: usize, chunk: usize) -> Result<Tensor<T>> {
        if layer >= self.blocks.len() {
            return Err(Error::Contract(format!("layer {layer} out of range for {} blocks", self.blocks.len())));
        }
        self.map_chunks(x, chunk, |net, binder, v| Ok(net.trace(binder, v)?.normalized[layer]))
    }

    pub fn logits(&mut self, x: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
        self.map_chunks(x, chunk, |net, binder, v| net.forward(binder, v))
    }

    fn map_chunks(
        &mut self,
        x: &Tensor<T>,
        chunk: usize,
        f: impl for<'t> Fn(&mut Self, &mut ParamBinder<'t, T>, Var<'t, T>) -> Result<Var<'t, T>>,
    ) -> Result<Tensor<T>> {
        if x.rank() != 2 || chunk == 0 {
            return Err(Error::dim("mlp", format!("expected [N×d] input and positive chunk, got {:?}", x.shape())));
        }
        let saved = self.modes();
        self.set_mode(Mode::Inference);
        let n = x.shape()[0];
        let mut data = Vec::new();
        let mut width = 0;
        let mut start = 0;
        let result = (|| {
            while start < n {
                let end = (start + chunk).min(n);
                let rows: Vec<usize> = (start..end).collect();
                let tape = Tape::new();
                let mut binder = ParamBinder::frozen(&tape);
                let out = f(self, &mut binder, tape.constant(x.select_rows(&rows)?))?;
                width = out.shape()[1];
                data.extend_from_slice(out.value().data());
                start = end;
            }
            Ok::<_, Error>(())
        })();
        self.restore_modes(&saved);
        result?;
        Tensor::new(vec![n, width], data)
    }

    fn modes(&self) -> Vec<Mode> {
        self.blocks
            .iter()
            .map(|b| match &b.norm {
                Norm::None => Mode::Train,
                Norm::BatchNorm(bn) => bn.stats.mode,
                Norm::Unitization(u) => u.stats.mode,
            })
            .collect()
    }

    fn restore_modes(&mut self, modes: &[Mode]) {
        for (b, &m) in self.blocks.iter_mut().zip(modes) {
            b.norm.set_mode(m);
        }
    }

    /// Fraction of rows whose arg-max logit equals the label.
    pub fn accuracy(&mut self, x: &Tensor<T>, labels: &[usize], chunk: usize) -> Result<f64> {
        let logits = self.logits(x, chunk)?;
        if labels.len() != logits.shape()[0] {
            return Err(Error::dim("accuracy", format!("{} labels for {} rows", labels.len(), logits.shape()[0])));
        }
        let correct = labels
            .iter()
            .enumerate()
            .filter(|&(i, &l)| {
                let row = logits.row(i);
                let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                best == l
            })
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Every trainable tensor, in the order a forward pass binds them.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.dense.params_mut());
            out.extend(b.norm.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    /// One mini-batch of cross-entropy SGD in train mode; returns the batch loss.
    pub fn train_step(
        &mut self,
        x: &Tensor<T>,
        labels: &[usize],
        opt: &mut Sgd<T>,
        config: &SgdConfig<T>,
        lr: T,
    ) -> Result<T> {
        self.set_mode(Mode::Train);
        let tape = Tape::new();
        let mut binder = ParamBinder::trainable(&tape);
        let logits = self.forward(&mut binder, tape.constant(x.clone()))?;
        let loss = logits.softmax_cross_entropy(labels)?;
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged(format!("non-finite training loss {value}")));
        }
        let grads = binder.gradients(&loss.backward()?);
        opt.step(&mut self.params_mut(), &grads, config, lr)?;
        for b in &mut self.blocks {
            if let Norm::Unitization(u) = &mut b.norm {
                clamp_alpha(&mut u.params);
            }
        }
        Ok(value)
    }

    /// `(min, mean, max)` of `α` for each unitization block.
    pub fn alpha_summary(&self) -> Vec<(T, T, T)> {
        self.blocks
            .iter()
            .filter_map(|b| match &b.norm {
                Norm::Unitization(u) => {
                    let a = u.params.alpha.data();
                    let min = a.iter().copied().fold(T::infinity(), T::min);
                    let max = a.iter().copied().fold(T::neg_infinity(), T::max);
                    let mean = a.iter().copied().sum::<T>() / T::of(a.len() as f64);
                    Some((min, mean, max))
                }
                _ => None,
            })
            .collect()
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.dense.weight"), &mut b.dense.weight));
            out.push((format!("block{i}.dense.bias"), &mut b.dense.bias));
            for (name, t) in b.norm.named_mut() {
                out.push((format!("block{i}.norm.{name}"), t));
            }
        }
        out.push(("head.weight".to_string(), &mut self.head.weight));
        out.push(("head.bias".to_string(), &mut self.head.bias));
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut copy = self.clone();
        let mut c = Checkpoint::new();
        for (name, t) in copy.named_mut() {
            c.push(name, t.clone());
        }
        c
    }

    /// Overwrites every tensor from `c`; names and shapes must match.
    pub fn load_checkpoint(&mut self, c: &Checkpoint<T>) -> Result<()> {
        for (name, t) in self.named_mut() {
            let src = c.get(&name)?;
            if src.shape() != t.shape() {
                return Err(Error::dim("checkpoint", format!("'{name}' is {:?}, expected {:?}", src.shape(), t.shape())));
            }
            *t = src.clone();
        }
        Ok(())
    }

    pub fn from_checkpoint(spec: &MlpSpec, c: &Checkpoint<T>) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(spec, &mut rng)?;
        net.load_checkpoint(c)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand_chacha::ChaCha8Rng;

    fn small(norm: NormKind) -> MlpSpec {
        MlpSpec::uniform(5, vec![6, 4], 3, norm)
    }

    #[test]
    fn shared_initialization_across_norms() {
        let a = Mlp::<f64>::new(&small(NormKind::BatchNorm), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = Mlp::<f64>::new(&small(NormKind::Unitization), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for (x, y) in a.blocks.iter().zip(&b.blocks) {
            assert_eq!(x.dense, y.dense);
        }
        assert_eq!(a.head, b.head);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::<f64>::new(&small(NormKind::Unitization), &mut rng).unwrap();
        let c = net.to_checkpoint();
        assert!(c.get("block1.norm.alpha").is_ok());
        let back = Mlp::from_checkpoint(&net.spec(), &c).unwrap();
        assert_eq!(back, net);
        let other = Mlp::<f64>::from_checkpoint(&small(NormKind::BatchNorm), &c);
        assert!(other.is_ok());
        assert!(Mlp::<f64>::from_checkpoint(&MlpSpec { inputs: 7, ..small(NormKind::None) }, &c).is_err());
    }

    #[test]
    fn whole_network_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [NormKind::None, NormKind::BatchNorm, NormKind::Unitization] {
            let mut net = Mlp::<f64>::new(&small(kind), &mut rng).unwrap();
            if let Norm::Unitization(u) = &mut net.blocks[0].norm {
                u.params.alpha = Tensor::full(&[6], 0.4);
            }
            let x = crate::nn::he_init(&[6, 5], 1, &mut rng).unwrap();
            let labels = [0, 1, 2, 0, 1, 2];
            let err = grad_check(
                |tape, v| {
                    let mut n = net.clone();
                    let mut b = ParamBinder::frozen(tape);
                    n.forward(&mut b, v)?.softmax_cross_entropy(&labels)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "{kind}: {err}");
        }
    }

    #[test]
    fn training_reduces_loss_and_clamps_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::<f64>::new(&small(NormKind::Unitization), &mut rng).unwrap();
        let x = crate::nn::he_init(&[12, 5], 1, &mut rng).unwrap();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let cfg = SgdConfig::<f64> { lr: 0.1, ..SgdConfig::default() };
        let mut opt = Sgd::new();
        let first = net.train_step(&x, &labels, &mut opt, &cfg, 0.1).unwrap();
        let mut last = first;
        for _ in 0..60 {
            last = net.train_step(&x, &labels, &mut opt, &cfg, 0.1).unwrap();
            for (lo, _, hi) in net.alpha_summary() {
                assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
            }
        }
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn inference_helpers_restore_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::<f64>::new(&small(NormKind::BatchNorm), &mut rng).unwrap();
        let x = crate::nn::he_init(&[7, 5], 1, &mut rng).unwrap();
        let out = net.layer_outputs(&x, 1, 3).unwrap();
        assert_eq!(out.shape(), &[7, 4]);
        assert_eq!(net.modes(), vec![Mode::Train, Mode::Train]);
        let acc = net.accuracy(&x, &[0; 7], 2).unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!(net.layer_outputs(&x, 2, 3).is_err());
    }
}
