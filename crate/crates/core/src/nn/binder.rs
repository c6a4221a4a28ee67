use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{five_point, Gradients, Tape, Tensor, Var};

/// Puts a module's parameters on a tape for one forward pass.
///
/// Trainable binders record leaves (which receive gradients); frozen binders
/// record constants. Parameters are bound in the same order the owning module
/// returns them from `params_mut`.
pub struct ParamBinder<'t, T> {
    tape: &'t Tape<T>,
    trainable: bool,
    bound: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> ParamBinder<'t, T> {
    pub fn trainable(tape: &'t Tape<T>) -> Self {
        ParamBinder { tape, trainable: true, bound: Vec::new() }
    }

    pub fn frozen(tape: &'t Tape<T>) -> Self {
        ParamBinder { tape, trainable: false, bound: Vec::new() }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn bind(&mut self, value: &Tensor<T>) -> Var<'t, T> {
        let v = if self.trainable { self.tape.leaf(value.clone()) } else { self.tape.constant(value.clone()) };
        self.bound.push(v);
        v
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.bound
    }

    /// Gradients of every bound parameter, in binding order.
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.bound.iter().map(|v| grads.wrt(v)).collect()
    }
}

/// Worst relative error between the tape gradients of a module's parameters
/// and five-point finite differences, with the metric of [`crate::tensor::grad_check`].
///
/// `loss` must bind exactly the tensors `params_of` returns, in that order.
/// Every evaluation runs on a fresh clone, so state updated by the forward
/// pass (running statistics) does not leak between evaluations.
pub fn param_grad_check<M, T, F>(module: &M, params_of: fn(&mut M) -> Vec<&mut Tensor<T>>, loss: F, h: T) -> Result<T>
where
    M: Clone,
    T: Scalar,
    F: for<'t> Fn(&mut M, &mut ParamBinder<'t, T>) -> Result<Var<'t, T>>,
{
    let scalar = |out: &Var<'_, T>| {
        out.value()
            .item()
            .ok_or_else(|| Error::Contract(format!("gradient check needs a scalar output, got shape {:?}", out.shape())))
    };
    let tape = Tape::new();
    let mut binder = ParamBinder::trainable(&tape);
    let mut m = module.clone();
    let out = loss(&mut m, &mut binder)?;
    scalar(&out)?;
    let analytic = binder.gradients(&out.backward()?);
    let count = params_of(&mut module.clone()).len();
    if analytic.len() != count {
        return Err(Error::Contract(format!("loss bound {} tensors, module has {count}", analytic.len())));
    }
    let eval = |which: usize, k: usize, delta: T| -> Result<T> {
        let mut m = module.clone();
        {
            let mut params = params_of(&mut m);
            let slot = &mut params[which].data_mut()[k];
            *slot = *slot + delta;
        }
        let tape = Tape::new();
        let mut binder = ParamBinder::frozen(&tape);
        let out = loss(&mut m, &mut binder)?;
        scalar(&out)
    };
    let floor = T::of(1e-8);
    let mut worst = T::zero();
    for (which, g) in analytic.iter().enumerate() {
        for (k, &a) in g.data().iter().enumerate() {
            let n = five_point(|delta| eval(which, k, delta), h)?;
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(floor));
        }
    }
    Ok(worst)
}
