use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{NodeId, Tensor};
use crate::error::{domain_err, shape_err, Error, Result};
use crate::scalar::Scalar;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Differentiable operation kinds.
///
/// Shape rules:
/// - `Add`, `Sub`, `Mul`, `Div`: numpy-style broadcasting of two inputs.
/// - `MatMul`: `[n, k] x [k, m] -> [n, m]`.
/// - `Sum`/`Mean` with `axis: None` reduce to a scalar, otherwise drop that axis.
/// - `Softmax`, `LogSoftmax`: over the last axis.
/// - `GatherRows`: picks rows (axis 0) by index, duplicates allowed.
/// - `Concat`: all inputs agree except along `axis`.
/// - `Broadcast`: expands to the target shape under broadcasting rules.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind<T> {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Exp,
    Log,
    Pow(T),
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    Softmax,
    LogSoftmax,
    Sigmoid,
    Tanh,
    Relu,
    Neg,
    SmoothL1 { beta: T },
    GatherRows(Vec<usize>),
    Concat { axis: usize },
    Broadcast(Vec<usize>),
    Transpose,
    Reshape(Vec<usize>),
}

impl<T> OpKind<T> {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::MatMul => "matmul",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Pow(_) => "pow",
            OpKind::Sum { .. } => "sum",
            OpKind::Mean { .. } => "mean",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Neg => "neg",
            OpKind::SmoothL1 { .. } => "smooth_l1",
            OpKind::GatherRows(_) => "gather_rows",
            OpKind::Concat { .. } => "concat",
            OpKind::Broadcast(_) => "broadcast",
            OpKind::Transpose => "transpose",
            OpKind::Reshape(_) => "reshape",
        }
    }
}

#[derive(Clone, Debug)]
enum Recorded<T> {
    Param,
    Const,
    Op(OpKind<T>),
    StraightThrough,
}

#[derive(Debug)]
struct Node<T> {
    kind: Recorded<T>,
    inputs: Vec<usize>,
    shape: Vec<usize>,
    value: Vec<T>,
}

/// Define-by-run reverse-mode tape. Single-threaded; build one per minibatch.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every parameter on a tape.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a parameter leaf. Constants and tensors from other tapes get `None`;
    /// parameters the loss does not depend on get zeros.
    pub fn get(&self, t: &Tensor<T>) -> Option<Tensor<T>> {
        let node = t.node()?;
        if node.tape != self.tape {
            return None;
        }
        self.grads.get(node.index).and_then(|g| g.clone())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, kind: Recorded<T>, inputs: Vec<usize>, shape: Vec<usize>, value: Vec<T>) -> Tensor<T> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            kind,
            inputs,
            shape: shape.clone(),
            value: value.clone(),
        });
        Tensor::new(shape, value)
            .expect("recorded shape matches")
            .with_node(NodeId { tape: self.id, index })
    }

    /// Records a trainable leaf.
    pub fn param(&self, t: &Tensor<T>) -> Tensor<T> {
        self.push(Recorded::Param, Vec::new(), t.shape().to_vec(), t.data().to_vec())
    }

    fn input_index(&self, t: &Tensor<T>) -> Result<usize> {
        match t.node() {
            Some(node) if node.tape == self.id => Ok(node.index),
            Some(_) => Err(Error::ForeignTensor),
            None => Ok(self
                .push(Recorded::Const, Vec::new(), t.shape().to_vec(), t.data().to_vec())
                .node()
                .expect("just recorded")
                .index),
        }
    }

    /// Evaluates `op` on `inputs` and records it.
    pub fn apply(&self, op: OpKind<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (shape, value) = forward(&op, inputs)?;
        let idx = inputs
            .iter()
            .map(|t| self.input_index(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.push(Recorded::Op(op), idx, shape, value))
    }

    /// Forward value of `replacement`, gradient copied unchanged to `input`.
    pub fn straight_through(&self, input: &Tensor<T>, replacement: &Tensor<T>) -> Result<Tensor<T>> {
        if input.shape() != replacement.shape() {
            return shape_err(
                "straight_through",
                format!("{:?} vs {:?}", input.shape(), replacement.shape()),
            );
        }
        let i = self.input_index(input)?;
        Ok(self.push(
            Recorded::StraightThrough,
            vec![i],
            replacement.shape().to_vec(),
            replacement.data().to_vec(),
        ))
    }

    pub fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn div(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Div, &[a, b])
    }
    pub fn matmul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn exp(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Exp, &[a])
    }
    pub fn log(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Log, &[a])
    }
    pub fn pow(&self, a: &Tensor<T>, p: T) -> Result<Tensor<T>> {
        self.apply(OpKind::Pow(p), &[a])
    }
    pub fn sum(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Sum { axis: None }, &[a])
    }
    pub fn sum_axis(&self, a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        self.apply(OpKind::Sum { axis: Some(axis) }, &[a])
    }
    pub fn mean(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Mean { axis: None }, &[a])
    }
    pub fn mean_axis(&self, a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        self.apply(OpKind::Mean { axis: Some(axis) }, &[a])
    }
    pub fn softmax(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Softmax, &[a])
    }
    pub fn log_softmax(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::LogSoftmax, &[a])
    }
    pub fn sigmoid(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Sigmoid, &[a])
    }
    pub fn tanh(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Tanh, &[a])
    }
    pub fn relu(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Relu, &[a])
    }
    pub fn neg(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Neg, &[a])
    }
    pub fn smooth_l1(&self, a: &Tensor<T>, beta: T) -> Result<Tensor<T>> {
        self.apply(OpKind::SmoothL1 { beta }, &[a])
    }
    pub fn gather_rows(&self, a: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
        self.apply(OpKind::GatherRows(idx.to_vec()), &[a])
    }
    pub fn concat(&self, parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        self.apply(OpKind::Concat { axis }, parts)
    }
    pub fn broadcast(&self, a: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        self.apply(OpKind::Broadcast(shape.to_vec()), &[a])
    }
    pub fn transpose(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(OpKind::Transpose, &[a])
    }
    pub fn reshape(&self, a: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        self.apply(OpKind::Reshape(shape.to_vec()), &[a])
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&self, a: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        self.mul(a, &Tensor::scalar(c))
    }

    /// Adds a constant scalar.
    pub fn shift(&self, a: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        self.add(a, &Tensor::scalar(c))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        if loss.len() != 1 {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        let root = match loss.node() {
            Some(n) if n.tape == self.id => n.index,
            Some(_) => return Err(Error::ForeignTensor),
            None => return Err(Error::InvalidArgument("loss is not recorded on this tape".into())),
        };
        let nodes = self.nodes.borrow();
        let mut acc: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        acc[root] = Some(vec![T::one()]);
        for idx in (0..=root).rev() {
            let Some(g) = acc[idx].take() else { continue };
            let node = &nodes[idx];
            match &node.kind {
                Recorded::Param => acc[idx] = Some(g),
                Recorded::Const => {}
                Recorded::StraightThrough => accumulate(&mut acc, node.inputs[0], g),
                Recorded::Op(op) => {
                    let ins: Vec<&Node<T>> = node.inputs.iter().map(|&i| &nodes[i]).collect();
                    let gs = backward_op(op, &ins, node, &g);
                    for (&i, gi) in node.inputs.iter().zip(gs) {
                        if let Some(gi) = gi {
                            accumulate(&mut acc, i, gi);
                        }
                    }
                }
            }
        }
        let grads = nodes
            .iter()
            .zip(acc)
            .map(|(node, g)| match node.kind {
                Recorded::Param => Some(
                    Tensor::new(
                        node.shape.clone(),
                        g.unwrap_or_else(|| vec![T::zero(); node.value.len()]),
                    )
                    .expect("gradient shape"),
                ),
                _ => None,
            })
            .collect();
        Ok(Gradients { tape: self.id, grads })
    }
}

fn accumulate<T: Scalar>(acc: &mut [Option<Vec<T>>], i: usize, g: Vec<T>) {
    match &mut acc[i] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e = *e + x),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for k in 0..n {
        let da = if k + a.len() >= n { a[k + a.len() - n] } else { 1 };
        let db = if k + b.len() >= n { b[k + b.len() - n] } else { 1 };
        out[k] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return None;
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index into a tensor of shape `input` broadcast to it.
fn broadcast_map(input: &[usize], out: &[usize]) -> Vec<usize> {
    let total: usize = out.iter().product();
    if input == out {
        return (0..total).collect();
    }
    let offset = out.len() - input.len();
    let mut in_strides = vec![0usize; out.len()];
    let mut stride = 1;
    for k in (0..input.len()).rev() {
        in_strides[k + offset] = if input[k] == 1 { 0 } else { stride };
        stride *= input[k];
    }
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; out.len()];
    for _ in 0..total {
        map.push(counter.iter().zip(&in_strides).map(|(c, s)| c * s).sum());
        for k in (0..out.len()).rev() {
            counter[k] += 1;
            if counter[k] < out[k] {
                break;
            }
            counter[k] = 0;
        }
    }
    map
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let pre = shape[..axis].iter().product();
    let post = shape[axis + 1..].iter().product();
    (pre, shape[axis], post)
}

fn forward<T: Scalar>(op: &OpKind<T>, inputs: &[&Tensor<T>]) -> Result<(Vec<usize>, Vec<T>)> {
    let name = op.name();
    let arity = match op {
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::MatMul => Some(2),
        OpKind::Concat { .. } => None,
        _ => Some(1),
    };
    if let Some(n) = arity {
        if inputs.len() != n {
            return shape_err(name, format!("expected {} inputs, got {}", n, inputs.len()));
        }
    } else if inputs.is_empty() {
        return shape_err(name, "no inputs");
    }
    let x = inputs[0];
    match op {
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
            let y = inputs[1];
            let shape = broadcast_shape(x.shape(), y.shape()).ok_or_else(|| Error::Shape {
                op: name,
                detail: format!("cannot broadcast {:?} with {:?}", x.shape(), y.shape()),
            })?;
            if matches!(op, OpKind::Div) && y.data().iter().any(|v| *v == T::zero()) {
                return domain_err(name, "division by zero");
            }
            let ma = broadcast_map(x.shape(), &shape);
            let mb = broadcast_map(y.shape(), &shape);
            let (a, b) = (x.data(), y.data());
            let value = ma
                .iter()
                .zip(&mb)
                .map(|(&i, &j)| match op {
                    OpKind::Add => a[i] + b[j],
                    OpKind::Sub => a[i] - b[j],
                    OpKind::Mul => a[i] * b[j],
                    _ => a[i] / b[j],
                })
                .collect();
            Ok((shape, value))
        }
        OpKind::MatMul => {
            let y = inputs[1];
            if x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[0] {
                return shape_err(name, format!("{:?} x {:?}", x.shape(), y.shape()));
            }
            let (n, k, m) = (x.shape()[0], x.shape()[1], y.shape()[1]);
            Ok((vec![n, m], matmul(x.data(), y.data(), n, k, m)))
        }
        OpKind::Exp => Ok((x.shape().to_vec(), x.data().iter().map(|v| v.exp()).collect())),
        OpKind::Log => {
            if let Some(v) = x.data().iter().find(|v| !(**v > T::zero())) {
                return domain_err(name, format!("log of non-positive value {}", v));
            }
            Ok((x.shape().to_vec(), x.data().iter().map(|v| v.ln()).collect()))
        }
        OpKind::Pow(p) => {
            let integral = p.fract() == T::zero();
            let bad = x.data().iter().find(|v| {
                (!integral && !(**v > T::zero())) || (integral && *p < T::zero() && **v == T::zero())
            });
            if let Some(v) = bad {
                return domain_err(name, format!("{}^{} undefined", v, p));
            }
            Ok((x.shape().to_vec(), x.data().iter().map(|v| v.powf(*p)).collect()))
        }
        OpKind::Sum { axis } | OpKind::Mean { axis } => {
            let mean = matches!(op, OpKind::Mean { .. });
            match axis {
                None => {
                    let s: T = x.data().iter().copied().sum();
                    let n = T::from_usize_lossy(x.len().max(1));
                    Ok((Vec::new(), vec![if mean { s / n } else { s }]))
                }
                Some(ax) => {
                    if *ax >= x.ndim() {
                        return shape_err(name, format!("axis {} out of range for {:?}", ax, x.shape()));
                    }
                    let (pre, n, post) = split_axis(x.shape(), *ax);
                    let mut out = vec![T::zero(); pre * post];
                    for o in 0..pre {
                        for j in 0..n {
                            for i in 0..post {
                                out[o * post + i] = out[o * post + i] + x.data()[(o * n + j) * post + i];
                            }
                        }
                    }
                    if mean && n > 0 {
                        let nn = T::from_usize_lossy(n);
                        out.iter_mut().for_each(|v| *v = *v / nn);
                    }
                    let mut shape = x.shape().to_vec();
                    shape.remove(*ax);
                    Ok((shape, out))
                }
            }
        }
        OpKind::Softmax | OpKind::LogSoftmax => {
            if x.ndim() == 0 {
                return shape_err(name, "needs at least one axis");
            }
            let c = x.cols();
            let mut out = Vec::with_capacity(x.len());
            for row in x.data().chunks(c.max(1)) {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = m + row.iter().map(|v| (*v - m).exp()).sum::<T>().ln();
                if matches!(op, OpKind::Softmax) {
                    out.extend(row.iter().map(|v| (*v - lse).exp()));
                } else {
                    out.extend(row.iter().map(|v| *v - lse));
                }
            }
            Ok((x.shape().to_vec(), out))
        }
        OpKind::Sigmoid => Ok((
            x.shape().to_vec(),
            x.data().iter().map(|v| sigmoid(*v)).collect(),
        )),
        OpKind::Tanh => Ok((x.shape().to_vec(), x.data().iter().map(|v| v.tanh()).collect())),
        OpKind::Relu => Ok((
            x.shape().to_vec(),
            x.data().iter().map(|v| v.max(T::zero())).collect(),
        )),
        OpKind::Neg => Ok((x.shape().to_vec(), x.data().iter().map(|v| -*v).collect())),
        OpKind::SmoothL1 { beta } => {
            if !(*beta > T::zero()) {
                return domain_err(name, "beta must be positive");
            }
            let half = T::lit(0.5);
            Ok((
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .map(|v| {
                        let a = v.abs();
                        if a < *beta {
                            half * a * a / *beta
                        } else {
                            a - half * *beta
                        }
                    })
                    .collect(),
            ))
        }
        OpKind::GatherRows(idx) => {
            if x.ndim() == 0 {
                return shape_err(name, "needs at least one axis");
            }
            let n = x.shape()[0];
            if let Some(bad) = idx.iter().find(|&&i| i >= n) {
                return shape_err(name, format!("row {} out of range for {:?}", bad, x.shape()));
            }
            let out = x.select_rows(idx);
            Ok((out.shape().to_vec(), out.into_data()))
        }
        OpKind::Concat { axis } => {
            let base = x.shape();
            if *axis >= base.len() {
                return shape_err(name, format!("axis {} out of range for {:?}", axis, base));
            }
            let mut total = 0;
            for t in inputs {
                let s = t.shape();
                let compatible = s.len() == base.len()
                    && s.iter().zip(base).enumerate().all(|(k, (a, b))| k == *axis || a == b);
                if !compatible {
                    return shape_err(name, format!("{:?} vs {:?} along axis {}", s, base, axis));
                }
                total += s[*axis];
            }
            let (pre, _, post) = split_axis(base, *axis);
            let mut out = Vec::with_capacity(pre * total * post);
            for o in 0..pre {
                for t in inputs {
                    let n = t.shape()[*axis];
                    out.extend_from_slice(&t.data()[o * n * post..(o + 1) * n * post]);
                }
            }
            let mut shape = base.to_vec();
            shape[*axis] = total;
            Ok((shape, out))
        }
        OpKind::Broadcast(target) => {
            match broadcast_shape(x.shape(), target) {
                Some(s) if s == *target => {}
                _ => {
                    return shape_err(name, format!("cannot broadcast {:?} to {:?}", x.shape(), target));
                }
            }
            let map = broadcast_map(x.shape(), target);
            Ok((target.clone(), map.iter().map(|&i| x.data()[i]).collect()))
        }
        OpKind::Transpose => {
            if x.ndim() != 2 {
                return shape_err(name, format!("needs a matrix, got {:?}", x.shape()));
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = x.data()[i * c + j];
                }
            }
            Ok((vec![c, r], out))
        }
        OpKind::Reshape(shape) => {
            if shape.iter().product::<usize>() != x.len() {
                return shape_err(name, format!("{:?} into {:?}", x.shape(), shape));
            }
            Ok((shape.clone(), x.data().to_vec()))
        }
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Scalar>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// Sums `g` (shaped `out`) back down to `input` under broadcasting.
fn reduce_to<T: Scalar>(g: &[T], input: &[usize], out: &[usize]) -> Vec<T> {
    if input == out {
        return g.to_vec();
    }
    let map = broadcast_map(input, out);
    let mut red = vec![T::zero(); input.iter().product()];
    for (k, &i) in map.iter().enumerate() {
        red[i] = red[i] + g[k];
    }
    red
}

fn backward_op<T: Scalar>(op: &OpKind<T>, ins: &[&Node<T>], out: &Node<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
    let x = ins[0];
    let elementwise = |f: &dyn Fn(usize) -> T| -> Vec<Option<Vec<T>>> {
        vec![Some((0..g.len()).map(|k| g[k] * f(k)).collect())]
    };
    match op {
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
            let y = ins[1];
            let ma = broadcast_map(&x.shape, &out.shape);
            let mb = broadcast_map(&y.shape, &out.shape);
            let mut ga = vec![T::zero(); x.value.len()];
            let mut gb = vec![T::zero(); y.value.len()];
            for k in 0..g.len() {
                let (i, j) = (ma[k], mb[k]);
                let (a, b) = (x.value[i], y.value[j]);
                let (da, db) = match op {
                    OpKind::Add => (g[k], g[k]),
                    OpKind::Sub => (g[k], -g[k]),
                    OpKind::Mul => (g[k] * b, g[k] * a),
                    _ => (g[k] / b, -g[k] * a / (b * b)),
                };
                ga[i] = ga[i] + da;
                gb[j] = gb[j] + db;
            }
            vec![Some(ga), Some(gb)]
        }
        OpKind::MatMul => {
            let y = ins[1];
            let (n, k, m) = (x.shape[0], x.shape[1], y.shape[1]);
            let bt = transpose_raw(&y.value, k, m);
            let ga = matmul(g, &bt, n, m, k);
            let at = transpose_raw(&x.value, n, k);
            let gb = matmul(&at, g, k, n, m);
            vec![Some(ga), Some(gb)]
        }
        OpKind::Exp => elementwise(&|k| out.value[k]),
        OpKind::Log => elementwise(&|k| T::one() / x.value[k]),
        OpKind::Pow(p) => elementwise(&|k| *p * x.value[k].powf(*p - T::one())),
        OpKind::Sum { axis } | OpKind::Mean { axis } => {
            let mean = matches!(op, OpKind::Mean { .. });
            match axis {
                None => {
                    let scale = if mean {
                        T::one() / T::from_usize_lossy(x.value.len().max(1))
                    } else {
                        T::one()
                    };
                    vec![Some(vec![g[0] * scale; x.value.len()])]
                }
                Some(ax) => {
                    let (pre, n, post) = split_axis(&x.shape, *ax);
                    let scale = if mean && n > 0 {
                        T::one() / T::from_usize_lossy(n)
                    } else {
                        T::one()
                    };
                    let mut gx = vec![T::zero(); x.value.len()];
                    for o in 0..pre {
                        for j in 0..n {
                            for i in 0..post {
                                gx[(o * n + j) * post + i] = g[o * post + i] * scale;
                            }
                        }
                    }
                    vec![Some(gx)]
                }
            }
        }
        OpKind::Softmax => {
            let c = out.shape.last().copied().unwrap_or(1).max(1);
            let mut gx = Vec::with_capacity(g.len());
            for (s, gr) in out.value.chunks(c).zip(g.chunks(c)) {
                let dot: T = s.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                gx.extend(s.iter().zip(gr).map(|(si, gi)| *si * (*gi - dot)));
            }
            vec![Some(gx)]
        }
        OpKind::LogSoftmax => {
            let c = out.shape.last().copied().unwrap_or(1).max(1);
            let mut gx = Vec::with_capacity(g.len());
            for (ls, gr) in out.value.chunks(c).zip(g.chunks(c)) {
                let total: T = gr.iter().copied().sum();
                gx.extend(ls.iter().zip(gr).map(|(l, gi)| *gi - l.exp() * total));
            }
            vec![Some(gx)]
        }
        OpKind::Sigmoid => elementwise(&|k| out.value[k] * (T::one() - out.value[k])),
        OpKind::Tanh => elementwise(&|k| T::one() - out.value[k] * out.value[k]),
        OpKind::Relu => elementwise(&|k| if x.value[k] > T::zero() { T::one() } else { T::zero() }),
        OpKind::Neg => elementwise(&|_| -T::one()),
        OpKind::SmoothL1 { beta } => elementwise(&|k| {
            let v = x.value[k];
            if v.abs() < *beta {
                v / *beta
            } else {
                v.signum()
            }
        }),
        OpKind::GatherRows(idx) => {
            let c = if x.shape.is_empty() { 1 } else { x.value.len() / x.shape[0].max(1) };
            let mut gx = vec![T::zero(); x.value.len()];
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    gx[i * c + j] = gx[i * c + j] + g[r * c + j];
                }
            }
            vec![Some(gx)]
        }
        OpKind::Concat { axis } => {
            let (pre, total, post) = split_axis(&out.shape, *axis);
            let mut result = Vec::with_capacity(ins.len());
            let mut start = 0;
            for t in ins {
                let n = t.shape[*axis];
                let mut gt = Vec::with_capacity(t.value.len());
                for o in 0..pre {
                    let base = (o * total + start) * post;
                    gt.extend_from_slice(&g[base..base + n * post]);
                }
                start += n;
                result.push(Some(gt));
            }
            result
        }
        OpKind::Broadcast(_) => vec![Some(reduce_to(g, &x.shape, &out.shape))],
        OpKind::Transpose => vec![Some(transpose_raw(g, out.shape[0], out.shape[1]))],
        OpKind::Reshape(_) => vec![Some(g.to_vec())],
    }
}
