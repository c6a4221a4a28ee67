use std::cell::{Ref, RefCell};
use std::fmt;

use super::{reduction_map, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stride/padding of a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    /// Output extent along one spatial axis, or `None` when the geometry is invalid.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        if self.stride == 0 {
            return None;
        }
        let padded = input + 2 * self.padding;
        (padded >= kernel).then(|| (padded - kernel) / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    None,
    Lhs,
    Rhs,
}

enum Op<T> {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    Shift(usize),
    Sqrt(usize),
    Square(usize),
    Relu(usize),
    Sigmoid(usize),
    Sum { x: usize, map: Vec<usize>, scale: T },
    Expand { x: usize, map: Vec<usize> },
    L2Norm { x: usize, map: Vec<usize> },
    Transpose(usize),
    Reshape(usize),
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: Conv2dGeometry },
    SoftmaxXent { logits: usize, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in evaluation order; gradients are replayed in reverse.
///
/// A tape is rebuilt for every forward pass and is confined to one thread.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

/// Gradients produced by [`Var::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros when the root does not depend on it.
    pub fn wrt(&self, v: &Var<'_, T>) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(v.value().shape()),
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf: receives a gradient in `backward`.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Gradient-free input.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }
}

fn bcast_kind(op: &'static str, a: &[usize], b: &[usize], la: usize, lb: usize) -> Result<Bcast> {
    if a == b {
        Ok(Bcast::None)
    } else if la == 1 {
        Ok(Bcast::Lhs)
    } else if lb == 1 {
        Ok(Bcast::Rhs)
    } else {
        Err(Error::dim(op, format!("shapes {a:?} and {b:?} differ")))
    }
}

fn zip_bcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, kind: Bcast, f: impl Fn(T, T) -> T) -> Tensor<T> {
    match kind {
        Bcast::None => Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        },
        Bcast::Lhs => {
            let x = a.data[0];
            Tensor { shape: b.shape.clone(), data: b.data.iter().map(|&y| f(x, y)).collect() }
        }
        Bcast::Rhs => {
            let y = b.data[0];
            Tensor { shape: a.shape.clone(), data: a.data.iter().map(|&x| f(x, y)).collect() }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands recorded on different tapes".into()))
        }
    }

    fn record(&self, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Var<'t, T> {
        let rg = self.tape.needs(parents);
        self.tape.push(value, op, rg)
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let out = {
            let a = self.value();
            let b = other.value();
            if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::dim("matmul", format!("{:?} · {:?}", a.shape, b.shape)));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut c = vec![T::zero(); m * n];
            T::gemm(m, k, n, T::one(), &a.data, k as isize, 1, &b.data, n as isize, 1, T::zero(), &mut c, n as isize, 1);
            Tensor { shape: vec![m, n], data: c }
        };
        Ok(self.record(out, Op::Matmul(self.id, other.id), &[self.id, other.id]))
    }

    fn binary(
        &self,
        other: &Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        mk: impl Fn(usize, usize) -> Op<T>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let out = {
            let a = self.value();
            let b = other.value();
            let kind = bcast_kind(name, &a.shape, &b.shape, a.len(), b.len())?;
            zip_bcast(&a, &b, kind, f)
        };
        Ok(self.record(out, mk(self.id, other.id), &[self.id, other.id]))
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul)
    }

    /// Elementwise quotient; any exactly-zero denominator is rejected.
    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        if other.value().data.iter().any(|v| v.is_zero()) {
            return Err(Error::numeric("div", "division by exact zero"));
        }
        self.binary(other, "div", |x, y| x / y, Op::Div)
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        let out = self.value().map(|v| v * c);
        self.record(out, Op::Scale(self.id, c), &[self.id])
    }

    /// Adds a constant to every element.
    pub fn shift(&self, c: T) -> Var<'t, T> {
        let out = self.value().map(|v| v + c);
        self.record(out, Op::Shift(self.id), &[self.id])
    }

    pub fn sqrt(&self) -> Result<Var<'t, T>> {
        if self.value().data.iter().any(|v| *v < T::zero()) {
            return Err(Error::numeric("sqrt", "negative argument"));
        }
        let out = self.value().map(|v| v.sqrt());
        Ok(self.record(out, Op::Sqrt(self.id), &[self.id]))
    }

    pub fn square(&self) -> Var<'t, T> {
        let out = self.value().map(|v| v * v);
        self.record(out, Op::Square(self.id), &[self.id])
    }

    pub fn relu(&self) -> Var<'t, T> {
        let out = self.value().map(|v| if v > T::zero() { v } else { T::zero() });
        self.record(out, Op::Relu(self.id), &[self.id])
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        let out = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        self.record(out, Op::Sigmoid(self.id), &[self.id])
    }

    fn reduce(&self, axes: &[usize], mean: bool) -> Result<Var<'t, T>> {
        let (out, map, scale) = {
            let x = self.value();
            let mut axes = axes.to_vec();
            axes.sort_unstable();
            axes.dedup();
            if let Some(&bad) = axes.iter().find(|&&a| a >= x.rank()) {
                return Err(Error::dim("reduce", format!("axis {bad} for shape {:?}", x.shape)));
            }
            let count: usize = axes.iter().map(|&a| x.shape[a]).product();
            let (out_shape, map) = reduction_map(&x.shape, &axes);
            let scale = if mean { T::one() / T::of(count as f64) } else { T::one() };
            let mut data = vec![T::zero(); out_shape.iter().product()];
            for (v, &m) in x.data.iter().zip(&map) {
                data[m] = data[m] + *v;
            }
            if mean {
                data.iter_mut().for_each(|v| *v = *v * scale);
            }
            (Tensor { shape: out_shape, data }, map, scale)
        };
        Ok(self.record(out, Op::Sum { x: self.id, map, scale }, &[self.id]))
    }

    /// Sum over `axes`; the reduced axes are removed. No axes leaves the input unchanged.
    pub fn sum(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.reduce(axes, false)
    }

    pub fn mean(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.reduce(axes, true)
    }

    pub fn sum_all(&self) -> Var<'t, T> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        self.reduce(&axes, false).expect("all axes are valid")
    }

    pub fn mean_all(&self) -> Var<'t, T> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        self.reduce(&axes, true).expect("all axes are valid")
    }

    /// Inverse of a reduction: repeats the value along the inserted `axes` so the
    /// result has shape `out_shape`.
    pub fn expand(&self, out_shape: &[usize], axes: &[usize]) -> Result<Var<'t, T>> {
        let (out, map) = {
            let x = self.value();
            let (reduced, map) = reduction_map(out_shape, axes);
            if reduced != x.shape && !(reduced.is_empty() && x.len() == 1) {
                return Err(Error::dim(
                    "expand",
                    format!("{:?} cannot expand to {out_shape:?} along {axes:?}", x.shape),
                ));
            }
            let data = map.iter().map(|&m| x.data[m]).collect();
            (Tensor { shape: out_shape.to_vec(), data }, map)
        };
        Ok(self.record(out, Op::Expand { x: self.id, map }, &[self.id]))
    }

    /// Euclidean norm along `axis`, removing it.
    pub fn l2_norm(&self, axis: usize) -> Result<Var<'t, T>> {
        let (out, map) = {
            let x = self.value();
            if axis >= x.rank() {
                return Err(Error::dim("l2_norm", format!("axis {axis} for shape {:?}", x.shape)));
            }
            let (out_shape, map) = reduction_map(&x.shape, &[axis]);
            let mut data = vec![T::zero(); out_shape.iter().product()];
            for (v, &m) in x.data.iter().zip(&map) {
                data[m] = data[m] + *v * *v;
            }
            data.iter_mut().for_each(|v| *v = v.sqrt());
            (Tensor { shape: out_shape, data }, map)
        };
        Ok(self.record(out, Op::L2Norm { x: self.id, map }, &[self.id]))
    }

    pub fn transpose(&self) -> Result<Var<'t, T>> {
        let out = {
            let x = self.value();
            if x.rank() != 2 {
                return Err(Error::dim("transpose", format!("rank {} input", x.rank())));
            }
            transpose2(&x)
        };
        Ok(self.record(out, Op::Transpose(self.id), &[self.id]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value().clone().reshape(shape.to_vec())?;
        Ok(self.record(out, Op::Reshape(self.id), &[self.id]))
    }

    /// Direct cross-correlation of `x[N×C×H×W]` with `w[Co×C×kh×kw]` plus optional bias `[Co]`.
    pub fn conv2d(&self, w: &Var<'t, T>, b: Option<&Var<'t, T>>, geom: Conv2dGeometry) -> Result<Var<'t, T>> {
        self.same_tape(w)?;
        if let Some(b) = b {
            self.same_tape(b)?;
        }
        let out = {
            let x = self.value();
            let wv = w.value();
            if x.rank() != 4 || wv.rank() != 4 || x.shape[1] != wv.shape[1] {
                return Err(Error::dim("conv2d", format!("input {:?}, kernel {:?}", x.shape, wv.shape)));
            }
            let bias = match b {
                Some(b) => {
                    let bv = b.value();
                    if bv.shape != [wv.shape[0]] {
                        return Err(Error::dim("conv2d", format!("bias {:?}", bv.shape)));
                    }
                    Some(bv.data.clone())
                }
                None => None,
            };
            conv2d_forward(&x, &wv, bias.as_deref(), geom)?
        };
        let mut parents = vec![self.id, w.id];
        parents.extend(b.map(|b| b.id));
        Ok(self.record(out, Op::Conv2d { x: self.id, w: w.id, b: b.map(|b| b.id), geom }, &parents))
    }

    /// Mean softmax cross-entropy of `logits[n×k]` against integer labels.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Var<'t, T>> {
        let (out, probs) = {
            let z = self.value();
            if z.rank() != 2 || z.shape[0] != labels.len() {
                return Err(Error::dim("softmax_cross_entropy", format!("logits {:?}, {} labels", z.shape, labels.len())));
            }
            let k = z.shape[1];
            if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                return Err(Error::dim("softmax_cross_entropy", format!("label {bad} with {k} classes")));
            }
            let mut probs = Vec::with_capacity(z.len());
            let mut loss = T::zero();
            for (i, &label) in labels.iter().enumerate() {
                let row = z.row(i);
                let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let denom: T = row.iter().map(|&v| (v - mx).exp()).sum();
                let log_denom = denom.ln();
                loss = loss - (row[label] - mx - log_denom);
                probs.extend(row.iter().map(|&v| (v - mx).exp() / denom));
            }
            (Tensor::scalar(loss / T::of(labels.len() as f64)), probs)
        };
        Ok(self.record(out, Op::SoftmaxXent { logits: self.id, labels: labels.to_vec(), probs }, &[self.id]))
    }

    /// Reverse pass from a one-element root.
    pub fn backward(&self) -> Result<Gradients<T>> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!("backward from non-scalar root of shape {:?}", root.value.shape)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(Tensor::ones(&root.value.shape));
        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }
}

fn transpose2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (x.shape[0], x.shape[1]);
    let mut data = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = x.data[i * c + j];
        }
    }
    Tensor { shape: vec![c, r], data }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], id: usize, g: Tensor<T>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.data.iter_mut().zip(g.data).for_each(|(a, b)| *a = *a + b),
        slot @ None => *slot = Some(g),
    }
}

/// Gradient for a broadcast operand: the scalar side receives the total.
fn fold_bcast<T: Scalar>(g: Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    if g.len() == target.len() {
        Tensor { shape: target.shape.clone(), data: g.data }
    } else {
        let total: T = g.data.iter().copied().sum();
        Tensor { shape: target.shape.clone(), data: vec![total] }
    }
}

/// Value of `t` at flat position `i` of the broadcast result.
#[inline]
fn at<T: Scalar>(t: &Tensor<T>, i: usize) -> T {
    if t.data.len() == 1 {
        t.data[0]
    } else {
        t.data[i]
    }
}

fn propagate<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let val = |i: usize| &nodes[i].value;
    let rg = |i: usize| nodes[i].requires_grad;
    let elementwise = |x: usize, f: &dyn Fn(usize, T) -> T| Tensor {
        shape: nodes[x].value.shape.clone(),
        data: g.data.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect(),
    };
    let spread = |x: usize, map: &[usize], scale: T| Tensor {
        shape: nodes[x].value.shape.clone(),
        data: map.iter().map(|&m| g.data[m] * scale).collect(),
    };
    let like_g = |f: &dyn Fn(usize, T) -> T| Tensor {
        shape: g.shape.clone(),
        data: g.data.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect(),
    };
    match &node.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
            if rg(*a) {
                // dA = G · Bᵀ
                let mut da = vec![T::zero(); m * k];
                T::gemm(m, n, k, T::one(), &g.data, n as isize, 1, &bv.data, 1, n as isize, T::zero(), &mut da, k as isize, 1);
                accumulate(grads, nodes, *a, Tensor { shape: vec![m, k], data: da });
            }
            if rg(*b) {
                // dB = Aᵀ · G
                let mut db = vec![T::zero(); k * n];
                T::gemm(k, m, n, T::one(), &av.data, 1, k as isize, &g.data, n as isize, 1, T::zero(), &mut db, n as isize, 1);
                accumulate(grads, nodes, *b, Tensor { shape: vec![k, n], data: db });
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
            if rg(*a) {
                accumulate(grads, nodes, *a, fold_bcast(g.clone(), val(*a)));
            }
            if rg(*b) {
                accumulate(grads, nodes, *b, fold_bcast(g.map(|v| v * sign), val(*b)));
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if rg(*a) {
                accumulate(grads, nodes, *a, fold_bcast(like_g(&|i, gi| gi * at(bv, i)), av));
            }
            if rg(*b) {
                accumulate(grads, nodes, *b, fold_bcast(like_g(&|i, gi| gi * at(av, i)), bv));
            }
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if rg(*a) {
                accumulate(grads, nodes, *a, fold_bcast(like_g(&|i, gi| gi / at(bv, i)), av));
            }
            if rg(*b) {
                let d = like_g(&|i, gi| {
                    let q = at(bv, i);
                    -gi * at(av, i) / (q * q)
                });
                accumulate(grads, nodes, *b, fold_bcast(d, bv));
            }
        }
        Op::Scale(x, c) => accumulate(grads, nodes, *x, g.map(|v| v * *c)),
        Op::Shift(x) => accumulate(grads, nodes, *x, g.clone()),
        Op::Sqrt(x) => {
            let y = &node.value;
            accumulate(grads, nodes, *x, elementwise(*x, &|i, gi| gi / (T::of(2.0) * y.data[i])));
        }
        Op::Square(x) => {
            let xv = val(*x);
            accumulate(grads, nodes, *x, elementwise(*x, &|i, gi| T::of(2.0) * xv.data[i] * gi));
        }
        Op::Relu(x) => {
            let xv = val(*x);
            accumulate(grads, nodes, *x, elementwise(*x, &|i, gi| if xv.data[i] > T::zero() { gi } else { T::zero() }));
        }
        Op::Sigmoid(x) => {
            let y = &node.value;
            accumulate(grads, nodes, *x, elementwise(*x, &|i, gi| gi * y.data[i] * (T::one() - y.data[i])));
        }
        Op::Sum { x, map, scale } => {
            accumulate(grads, nodes, *x, spread(*x, map, *scale));
        }
        Op::Expand { x, map } => {
            let xv = val(*x);
            let mut d = vec![T::zero(); xv.len()];
            for (gi, &m) in g.data.iter().zip(map) {
                d[m] = d[m] + *gi;
            }
            accumulate(grads, nodes, *x, Tensor { shape: xv.shape.clone(), data: d });
        }
        Op::L2Norm { x, map } => {
            let xv = val(*x);
            let norms = &node.value;
            let d = xv
                .data
                .iter()
                .zip(map)
                .map(|(&xi, &m)| if norms.data[m] > T::zero() { g.data[m] * xi / norms.data[m] } else { T::zero() })
                .collect();
            accumulate(grads, nodes, *x, Tensor { shape: xv.shape.clone(), data: d });
        }
        Op::Transpose(x) => accumulate(grads, nodes, *x, transpose2(g)),
        Op::Reshape(x) => {
            accumulate(grads, nodes, *x, Tensor { shape: val(*x).shape.clone(), data: g.data.clone() })
        }
        Op::Conv2d { x, w, b, geom } => {
            let (gx, gw, gb) = conv2d_backward(val(*x), val(*w), g, *geom);
            if rg(*x) {
                accumulate(grads, nodes, *x, gx);
            }
            if rg(*w) {
                accumulate(grads, nodes, *w, gw);
            }
            if let Some(b) = b {
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::SoftmaxXent { logits, labels, probs } => {
            let zv = val(*logits);
            let k = zv.shape[1];
            let scale = g.data[0] / T::of(labels.len() as f64);
            let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (i, &l) in labels.iter().enumerate() {
                d[i * k + l] = d[i * k + l] - scale;
            }
            accumulate(grads, nodes, *logits, Tensor { shape: zv.shape.clone(), data: d });
        }
    }
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, geom: Conv2dGeometry) -> Result<ConvDims> {
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (co, kh, kw) = (k.shape[0], k.shape[2], k.shape[3]);
    let oh = geom.output_extent(h, kh);
    let ow = geom.output_extent(w, kw);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(ConvDims { n, c, h, w, co, kh, kw, oh, ow }),
        _ => Err(Error::dim("conv2d", format!("invalid geometry {geom:?} for input {h}×{w}, kernel {kh}×{kw}"))),
    }
}

/// Iterates over valid (input, kernel, output) flat positions in a fixed order.
fn conv_visit(d: &ConvDims, geom: Conv2dGeometry, mut f: impl FnMut(usize, usize, usize)) {
    let pad = geom.padding as isize;
    for ni in 0..d.n {
        for o in 0..d.co {
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let out_idx = ((ni * d.co + o) * d.oh + oy) * d.ow + ox;
                    for ci in 0..d.c {
                        for ky in 0..d.kh {
                            let iy = (oy * geom.stride + ky) as isize - pad;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            for kx in 0..d.kw {
                                let ix = (ox * geom.stride + kx) as isize - pad;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                let in_idx = ((ni * d.c + ci) * d.h + iy as usize) * d.w + ix as usize;
                                let k_idx = ((o * d.c + ci) * d.kh + ky) * d.kw + kx;
                                f(in_idx, k_idx, out_idx);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_forward<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, bias: Option<&[T]>, geom: Conv2dGeometry) -> Result<Tensor<T>> {
    let d = conv_dims(x, k, geom)?;
    let mut out = vec![T::zero(); d.n * d.co * d.oh * d.ow];
    if let Some(b) = bias {
        for (i, v) in out.iter_mut().enumerate() {
            *v = b[(i / (d.oh * d.ow)) % d.co];
        }
    }
    conv_visit(&d, geom, |i, kk, o| out[o] = out[o] + x.data[i] * k.data[kk]);
    Ok(Tensor { shape: vec![d.n, d.co, d.oh, d.ow], data: out })
}

fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    g: &Tensor<T>,
    geom: Conv2dGeometry,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = conv_dims(x, k, geom).expect("geometry validated in forward");
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); d.co];
    for (i, &gi) in g.data.iter().enumerate() {
        let o = (i / (d.oh * d.ow)) % d.co;
        gb[o] = gb[o] + gi;
    }
    conv_visit(&d, geom, |i, kk, o| {
        gx[i] = gx[i] + g.data[o] * k.data[kk];
        gk[kk] = gk[kk] + g.data[o] * x.data[i];
    });
    (
        Tensor { shape: x.shape.clone(), data: gx },
        Tensor { shape: k.shape.clone(), data: gk },
        Tensor { shape: vec![d.co], data: gb },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let tape = Tape::new();
        let i2 = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let m = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        assert_eq!(i2.matmul(&m).unwrap().value().data(), &[1., 2., 3., 4.]);
        let a = tape.constant(t(&[1, 2], &[1., 2.]));
        let b = tape.constant(t(&[2, 1], &[3., 4.]));
        assert_eq!(a.matmul(&b).unwrap().value().data(), &[11.]);
        assert!(matches!(a.matmul(&a), Err(Error::Dimension { .. })));
    }

    #[test]
    fn elementwise_examples() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1., 0., 2.]));
        assert_eq!(x.relu().value().data(), &[0., 0., 2.]);
        let s = tape.constant(t(&[2], &[4., 9.]));
        assert_eq!(s.sqrt().unwrap().value().data(), &[2., 3.]);
        let z = x.sub(&x).unwrap();
        assert_eq!(z.value().data(), &[0., 0., 0.]);
        let g = z.sum_all().backward().unwrap();
        assert_eq!(g.wrt(&x).data(), &[0., 0., 0.]);
    }

    #[test]
    fn numeric_errors() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2], &[1., 2.]));
        let z = tape.constant(t(&[2], &[1., 0.]));
        assert!(matches!(x.div(&z), Err(Error::Numeric { .. })));
        let neg = tape.constant(t(&[1], &[-1.]));
        assert!(matches!(neg.sqrt(), Err(Error::Numeric { .. })));
    }

    #[test]
    fn reductions() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 3.]));
        assert_eq!(x.mean(&[0]).unwrap().value().data(), &[2.]);
        let same = x.sum(&[]).unwrap();
        assert_eq!(same.value().data(), &[1., 3.]);
        let c = tape.constant(Tensor::full(&[3, 4], 2.5));
        assert_eq!(c.mean_all().value().item(), Some(2.5));
        assert!(x.sum(&[1]).is_err());
        let g = x.mean_all().backward().unwrap();
        assert_eq!(g.wrt(&x).data(), &[0.5, 0.5]);
    }

    #[test]
    fn l2_norm_examples() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[3., 4.]));
        let n = x.l2_norm(1).unwrap();
        assert_eq!(n.value().data(), &[5.]);
        let g = n.sum_all().backward().unwrap();
        assert_eq!(g.wrt(&x).data(), &[0.6, 0.8]);
        let zero = tape.constant(t(&[1, 2], &[0., 0.]));
        let guarded = zero.square().sum(&[1]).unwrap().shift(1e-5).sqrt().unwrap();
        assert_eq!(guarded.value().data(), &[1e-5f64.sqrt()]);
        let unit = tape.constant(t(&[1, 2], &[0.6, 0.8]));
        assert!((unit.l2_norm(1).unwrap().value().data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn backward_examples() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let g = x.sum_all().backward().unwrap();
        assert_eq!(g.wrt(&x).data(), &[1.; 6]);
        let y = tape.leaf(t(&[2], &[1., 2.]));
        let g = y.square().sum_all().backward().unwrap();
        assert_eq!(g.wrt(&y).data(), &[2., 4.]);
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn scalar_broadcast_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1., 2., 3.]));
        let s = tape.leaf(Tensor::scalar(2.0));
        let g = x.mul(&s).unwrap().sum_all().backward().unwrap();
        assert_eq!(g.wrt(&x).data(), &[2., 2., 2.]);
        assert_eq!(g.wrt(&s).data(), &[6.]);
    }

    #[test]
    fn expand_roundtrips_reduction() {
        let tape = Tape::new();
        let v = tape.leaf(t(&[3], &[1., 2., 3.]));
        let e = v.expand(&[2, 3], &[0]).unwrap();
        assert_eq!(e.value().data(), &[1., 2., 3., 1., 2., 3.]);
        let g = e.sum_all().backward().unwrap();
        assert_eq!(g.wrt(&v).data(), &[2., 2., 2.]);
        assert!(v.expand(&[3, 2], &[0]).is_err());
    }

    #[test]
    fn conv_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.]));
        let y = x.conv2d(&k, None, Conv2dGeometry { stride: 1, padding: 0 }).unwrap();
        assert_eq!(y.value().data(), &[1., 2., 3., 4.]);
        let ones = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let k3 = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = ones.conv2d(&k3, None, Conv2dGeometry { stride: 1, padding: 0 }).unwrap();
        assert_eq!(y.value().data(), &[9.]);
        assert_eq!(y.value().shape(), &[1, 1, 1, 1]);
        let big = tape.constant(Tensor::ones(&[1, 1, 5, 5]));
        assert!(ones.conv2d(&big, None, Conv2dGeometry { stride: 1, padding: 0 }).is_err());
        assert!(ones.conv2d(&k3, None, Conv2dGeometry { stride: 0, padding: 0 }).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(&[2, 4]));
        let loss = z.softmax_cross_entropy(&[0, 3]).unwrap();
        let v: f64 = loss.value().item().unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        let g = loss.backward().unwrap().wrt(&z);
        assert!((g.data()[0] - (0.25 - 1.0) / 2.0).abs() < 1e-12);
        assert!((g.data()[1] - 0.125).abs() < 1e-12);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(t(&[2], &[1., 2.]));
        let x = tape.leaf(t(&[2], &[3., 4.]));
        let g = c.mul(&x).unwrap().sum_all().backward().unwrap();
        assert!(g.get(&c).is_none());
        assert_eq!(g.wrt(&x).data(), &[1., 2.]);
    }
}
