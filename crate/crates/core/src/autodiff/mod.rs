//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse and applies each node's vector-Jacobian product.
//! Leaves are either trainable (they receive gradients) or constants (the
//! frozen classifier, the input sample). Nodes that depend only on constants
//! are skipped during the backward sweep.

mod gradcheck;

pub use gradcheck::{finite_diff_check, finite_diff_report, finite_diff_report_at, FiniteDiffReport};

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::nn::kernels::{self, sign, Volume};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise or linear operators addressable by tag through
/// [`Tape::forward_op`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Sum,
    Mean,
    Relu,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { input: Var, scale: f64 },
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Reshape(Var),
    Gather { input: Var, indices: Vec<usize> },
    L1Distance(Var, Var),
    MeanSquaredError(Var, Var),
    FrameDiffL1(Var),
    Conv { input: Var, weight: Var, bias: Var, vol: Volume, kernel: [usize; 3] },
    ConvTranspose { input: Var, weight: Var, bias: Var, vol: Volume, kernel: [usize; 3], stride: [usize; 3] },
    MaxPool { input: Var, argmax: Vec<usize> },
    Dense { input: Var, weight: Var, bias: Var },
    Softmax(Var),
    CrossEntropy { probs: Var, label: usize },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Append-only record of a computation.
pub struct Tape<R: Real = f32> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to the tape's leaves.
#[derive(Debug)]
pub struct Gradients<R: Real = f32> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, var: Var) -> Option<&Tensor<R>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn expect(&self, var: Var) -> Result<&Tensor<R>> {
        self.get(var)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient recorded for {var:?}")))
    }
}

pub(crate) const CROSS_ENTROPY_FLOOR: f64 = 1e-12;

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<R> {
        &self.nodes[var.0].value
    }

    fn leaf(&mut self, value: Tensor<R>, trainable: bool) -> Result<Var> {
        value.check_finite("leaf")?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A trainable leaf; it receives a gradient from `backward`.
    pub fn param(&mut self, value: Tensor<R>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// A constant leaf; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor<R>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Registers stored (`f32`) parameters on this tape, cast to `R`.
    pub fn bind(&mut self, params: &[&Tensor<f32>], trainable: bool) -> Result<Vec<Var>> {
        params
            .iter()
            .map(|p| self.leaf(p.cast(), trainable))
            .collect()
    }

    pub(crate) fn push(&mut self, value: Tensor<R>, op: Op, op_name: &'static str, inputs: &[Var]) -> Result<Var> {
        value.check_finite(op_name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        self.value(a).expect_same_shape(self.value(b), op)
    }

    /// Applies an elementwise or linear operator selected by tag.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match kind {
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::Scale(s) => self.scale(inputs[0], s),
            OpKind::AddScalar(c) => self.affine(inputs[0], 1.0, c),
            OpKind::Sum => self.sum(inputs[0]),
            OpKind::Mean => self.mean(inputs[0]),
            OpKind::Relu => self.relu(inputs[0]),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_with(self.value(b), "add", |x, y| x + y)?;
        self.push(v, Op::Add(a, b), "add", &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_with(self.value(b), "sub", |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), "sub", &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_with(self.value(b), "mul", |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), "mul", &[a, b])
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let (s, c) = (R::of(scale), R::of(shift));
        let v = self.value(x).map(|t| s * t + c);
        self.push(v, Op::Affine { input: x, scale }, "affine", &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(R::of(self.value(x).sum_f64()));
        self.push(v, Op::Sum(x), "sum", &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(R::of(self.value(x).mean_f64()));
        self.push(v, Op::Mean(x), "mean", &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|t| if t > R::zero() { t } else { R::zero() });
        self.push(v, Op::Relu(x), "relu", &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        self.push(v, Op::Reshape(x), "reshape", &[x])
    }

    /// Selects flat elements of `x` into a 1-D tensor.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(x);
        if indices.is_empty() {
            return Err(Error::InvalidArgument("gather needs at least one index".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.numel()) {
            return Err(Error::InvalidArgument(format!(
                "index {bad} out of range for {} elements",
                src.numel()
            )));
        }
        let data = indices.iter().map(|&i| src.data()[i]).collect();
        let v = Tensor::from_parts(vec![indices.len()], data);
        self.push(v, Op::Gather { input: x, indices: indices.to_vec() }, "gather", &[x])
    }

    /// Mean absolute difference over all elements.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1_distance")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let total: f64 = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y).abs().f64()).sum();
        let v = Tensor::scalar(R::of(total / ta.numel() as f64));
        self.push(v, Op::L1Distance(a, b), "l1_distance", &[a, b])
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let total: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| {
                let d = (x - y).f64();
                d * d
            })
            .sum();
        let v = Tensor::scalar(R::of(total / ta.numel() as f64));
        self.push(v, Op::MeanSquaredError(a, b), "mse", &[a, b])
    }

    /// Mean absolute change between adjacent frames of a `[C,T,H,W]` tensor.
    pub fn frame_diff_l1(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let vol = match t.shape() {
            [_, d, _, _] if *d >= 2 => Volume::from_shape(t.shape()).expect("rank 4"),
            _ => {
                return Err(Error::InvalidShape {
                    shape: t.shape().to_vec(),
                    reason: "frame difference needs [C,T,H,W] with T >= 2".into(),
                })
            }
        };
        let plane = vol.h * vol.w;
        let mut total = 0.0f64;
        for c in 0..vol.c {
            for f in 0..vol.d - 1 {
                let a = &t.data()[(c * vol.d + f) * plane..(c * vol.d + f + 1) * plane];
                let b = &t.data()[(c * vol.d + f + 1) * plane..(c * vol.d + f + 2) * plane];
                total += a.iter().zip(b).map(|(&p, &q)| (q - p).abs().f64()).sum::<f64>();
            }
        }
        let n = vol.c * (vol.d - 1) * plane;
        let v = Tensor::scalar(R::of(total / n as f64));
        self.push(v, Op::FrameDiffL1(x), "frame_diff_l1", &[x])
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 1 {
            return Err(Error::InvalidShape {
                shape: t.shape().to_vec(),
                reason: "softmax expects a 1-D tensor".into(),
            });
        }
        let v = Tensor::from_parts(t.shape().to_vec(), kernels::softmax(t.data()));
        self.push(v, Op::Softmax(logits), "softmax", &[logits])
    }

    /// `-ln(max(p[label], 1e-12))`.
    pub fn cross_entropy(&mut self, probs: Var, label: usize) -> Result<Var> {
        let p = self.value(probs);
        if label >= p.numel() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                p.numel()
            )));
        }
        let pl = p.data()[label].f64().max(CROSS_ENTROPY_FLOOR);
        let v = Tensor::scalar(R::of(-pl.ln()));
        self.push(v, Op::CrossEntropy { probs, label }, "cross_entropy", &[probs])
    }

    /// Runs reverse accumulation from the scalar `loss`.
    ///
    /// Trainable leaves that `loss` does not depend on get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<R>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.trainable {
                if grads[idx].is_none() {
                    grads[idx] = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<R>, g: &Tensor<R>, grads: &mut [Option<Tensor<R>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor<R>| -> Result<()> {
            if !self.wants(v) {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(t.data()) {
                        *a = *a + *b;
                    }
                }
                slot @ None => *slot = Some(t),
            }
            Ok(())
        };
        let like = |v: Var, data: Vec<R>| Tensor::from_parts(val(v).shape().to_vec(), data);

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.map(|t| -t))?;
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.zip_with(val(*b), "mul", |x, y| x * y)?)?;
                }
                if self.wants(*b) {
                    acc(*b, g.zip_with(val(*a), "mul", |x, y| x * y)?)?;
                }
            }
            Op::Affine { input, scale } => {
                let s = R::of(*scale);
                acc(*input, g.map(|t| t * s))?;
            }
            Op::Sum(x) => {
                let gs = g.data()[0];
                acc(*x, Tensor::full(val(*x).shape(), gs))?;
            }
            Op::Mean(x) => {
                let gs = R::of(g.data()[0].f64() / val(*x).numel() as f64);
                acc(*x, Tensor::full(val(*x).shape(), gs))?;
            }
            Op::Relu(x) => {
                let d = val(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| if xi > R::zero() { gi } else { R::zero() })
                    .collect();
                acc(*x, like(*x, d))?;
            }
            Op::Reshape(x) => acc(*x, like(*x, g.data().to_vec()))?,
            Op::Gather { input, indices } => {
                let mut d = vec![R::zero(); val(*input).numel()];
                for (&i, &gi) in indices.iter().zip(g.data()) {
                    d[i] = d[i] + gi;
                }
                acc(*input, like(*input, d))?;
            }
            Op::L1Distance(a, b) => {
                let scale = R::of(g.data()[0].f64() / val(*a).numel() as f64);
                let d: Vec<R> = val(*a)
                    .data()
                    .iter()
                    .zip(val(*b).data())
                    .map(|(&x, &y)| sign(x - y) * scale)
                    .collect();
                if self.wants(*b) {
                    acc(*b, like(*b, d.iter().map(|&t| -t).collect()))?;
                }
                acc(*a, like(*a, d))?;
            }
            Op::MeanSquaredError(a, b) => {
                let scale = R::of(2.0 * g.data()[0].f64() / val(*a).numel() as f64);
                let d: Vec<R> = val(*a)
                    .data()
                    .iter()
                    .zip(val(*b).data())
                    .map(|(&x, &y)| (x - y) * scale)
                    .collect();
                if self.wants(*b) {
                    acc(*b, like(*b, d.iter().map(|&t| -t).collect()))?;
                }
                acc(*a, like(*a, d))?;
            }
            Op::FrameDiffL1(x) => {
                let t = val(*x);
                let vol = Volume::from_shape(t.shape()).expect("checked in forward");
                let plane = vol.h * vol.w;
                let n = vol.c * (vol.d - 1) * plane;
                let scale = R::of(g.data()[0].f64() / n as f64);
                let mut d = vec![R::zero(); t.numel()];
                for c in 0..vol.c {
                    for f in 0..vol.d - 1 {
                        let lo = (c * vol.d + f) * plane;
                        let hi = lo + plane;
                        for p in 0..plane {
                            let s = sign(t.data()[hi + p] - t.data()[lo + p]) * scale;
                            d[hi + p] = d[hi + p] + s;
                            d[lo + p] = d[lo + p] - s;
                        }
                    }
                }
                acc(*x, like(*x, d))?;
            }
            Op::Conv { input, weight, bias, vol, kernel } => {
                let out_c = val(*bias).numel();
                if self.wants(*input) {
                    let d = kernels::conv_backward_input(g.data(), *vol, val(*weight).data(), out_c, *kernel);
                    acc(*input, like(*input, d))?;
                }
                if self.wants(*weight) || self.wants(*bias) {
                    let (gw, gb) = kernels::conv_backward_params(g.data(), val(*input).data(), *vol, out_c, *kernel);
                    acc(*weight, like(*weight, gw))?;
                    acc(*bias, like(*bias, gb))?;
                }
            }
            Op::ConvTranspose { input, weight, bias, vol, kernel, stride } => {
                let out_c = val(*bias).numel();
                let (gi, gw, gb) = kernels::conv_transpose_backward(
                    g.data(),
                    val(*input).data(),
                    *vol,
                    val(*weight).data(),
                    out_c,
                    *kernel,
                    *stride,
                    self.wants(*input),
                    self.wants(*weight) || self.wants(*bias),
                );
                if let Some(d) = gi {
                    acc(*input, like(*input, d))?;
                }
                if let (Some(w), Some(b)) = (gw, gb) {
                    acc(*weight, like(*weight, w))?;
                    acc(*bias, like(*bias, b))?;
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut d = vec![R::zero(); val(*input).numel()];
                for (&i, &gi) in argmax.iter().zip(g.data()) {
                    d[i] = d[i] + gi;
                }
                acc(*input, like(*input, d))?;
            }
            Op::Dense { input, weight, bias } => {
                let x = val(*input).data();
                let w = val(*weight).data();
                let n = x.len();
                if self.wants(*input) {
                    let mut gx = vec![0.0f64; n];
                    for (o, &go) in g.data().iter().enumerate() {
                        let go = go.f64();
                        for (a, &wv) in gx.iter_mut().zip(&w[o * n..(o + 1) * n]) {
                            *a += wv.f64() * go;
                        }
                    }
                    acc(*input, like(*input, gx.into_iter().map(R::of).collect()))?;
                }
                if self.wants(*weight) || self.wants(*bias) {
                    let mut gw = Vec::with_capacity(w.len());
                    for &go in g.data() {
                        gw.extend(x.iter().map(|&xv| go * xv));
                    }
                    acc(*weight, like(*weight, gw))?;
                    acc(*bias, like(*bias, g.data().to_vec()))?;
                }
            }
            Op::Softmax(x) => {
                let p = node.value.data();
                let dot: f64 = p.iter().zip(g.data()).map(|(&pi, &gi)| (pi * gi).f64()).sum();
                let d = p
                    .iter()
                    .zip(g.data())
                    .map(|(&pi, &gi)| R::of(pi.f64() * (gi.f64() - dot)))
                    .collect();
                acc(*x, like(*x, d))?;
            }
            Op::CrossEntropy { probs, label } => {
                let p = val(*probs).data()[*label].f64();
                let mut d = vec![R::zero(); val(*probs).numel()];
                if p >= CROSS_ENTROPY_FLOOR {
                    d[*label] = R::of(-g.data()[0].f64() / p);
                }
                acc(*probs, like(*probs, d))?;
            }
        }
        Ok(())
    }

    /// Hash of every piecewise-linear switching decision on the tape: relu
    /// signs, pooling argmaxes, signs inside absolute values. Two evaluations
    /// with equal signatures lie on the same linear piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let signs = |h: &mut DefaultHasher, it: &mut dyn Iterator<Item = R>| {
            for v in it {
                (v.partial_cmp(&R::zero()).map(|o| o as i8)).hash(h);
            }
        };
        for (idx, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(x) => {
                    idx.hash(&mut h);
                    signs(&mut h, &mut self.value(*x).data().iter().copied());
                }
                Op::MaxPool { argmax, .. } => {
                    idx.hash(&mut h);
                    argmax.hash(&mut h);
                }
                Op::L1Distance(a, b) => {
                    idx.hash(&mut h);
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    signs(&mut h, &mut ta.iter().zip(tb).map(|(&x, &y)| x - y));
                }
                Op::FrameDiffL1(x) => {
                    idx.hash(&mut h);
                    let t = self.value(*x);
                    let vol = Volume::from_shape(t.shape()).expect("rank 4");
                    let plane = vol.h * vol.w;
                    for c in 0..vol.c {
                        for f in 0..vol.d - 1 {
                            let lo = (c * vol.d + f) * plane;
                            signs(
                                &mut h,
                                &mut (0..plane).map(|p| t.data()[lo + plane + p] - t.data()[lo + p]),
                            );
                        }
                    }
                }
                Op::CrossEntropy { probs, label } => {
                    idx.hash(&mut h);
                    (self.value(*probs).data()[*label].f64() >= CROSS_ENTROPY_FLOOR).hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_slice(v)
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[1.0, 2.0])).unwrap();
        let b = tape.constant(t(&[3.0, 4.0])).unwrap();
        let s = tape.forward_op(OpKind::Add, &[a, b]).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);

        let c = tape.constant(t(&[1.0, -2.0])).unwrap();
        let z = tape.forward_op(OpKind::Scale(0.0), &[c]).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(Tensor::uniform(&[4, 5], -3.0, 3.0, &mut rng)).unwrap();
        let d = tape.sub(x, x).unwrap();
        assert!(tape.value(d).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elementwise_rejects_shape_mismatch() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2])).unwrap();
        let b = tape.constant(Tensor::zeros(&[3])).unwrap();
        match tape.add(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let mut tape = Tape::<f32>::new();
        assert!(matches!(
            tape.constant(Tensor::from_slice(&[1.0, f32::NAN])),
            Err(Error::NonFinite { .. })
        ));
        let big = tape.constant(Tensor::from_slice(&[f32::MAX])).unwrap();
        assert!(matches!(tape.scale(big, 10.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[2, 3, 4], 0.7)).unwrap();
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.expect(x).unwrap().data().iter().all(|&v| v == 1.0));
        assert_eq!(g.expect(x).unwrap().shape(), &[2, 3, 4]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1.0, 2.0, 3.0])).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.expect(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::zeros(&[3])).unwrap();
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NotScalar(_))));
    }

    #[test]
    fn untouched_leaves_get_zero_gradients() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::ones(&[2])).unwrap();
        let unused = tape.param(Tensor::ones(&[2, 2])).unwrap();
        let c = tape.constant(Tensor::ones(&[2])).unwrap();
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.expect(unused).unwrap(), &Tensor::zeros(&[2, 2]));
        assert!(g.get(c).is_none());
    }

    #[test]
    fn constant_branch_contributes_nothing() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1.5, -0.5])).unwrap();
        let c = tape.constant(t(&[4.0, 5.0])).unwrap();
        let cc = tape.mul(c, c).unwrap();
        let lin = tape.sum(x).unwrap();
        let k = tape.sum(cc).unwrap();
        let l = tape.add(lin, k).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.expect(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_twice_is_bit_identical() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::uniform(&[6], -1.0, 1.0, &mut rng)).unwrap();
        let w = tape.param(Tensor::uniform(&[3, 6], -1.0, 1.0, &mut rng)).unwrap();
        let b = tape.param(Tensor::uniform(&[3], -1.0, 1.0, &mut rng)).unwrap();
        let y = tape.dense(x, w, b).unwrap();
        let p = tape.softmax(y).unwrap();
        let l = tape.cross_entropy(p, 1).unwrap();
        let g1 = tape.backward(l).unwrap();
        let g2 = tape.backward(l).unwrap();
        for v in [x, w, b] {
            let a: Vec<u32> = g1.expect(v).unwrap().data().iter().map(|f| f.to_bits()).collect();
            let c: Vec<u32> = g2.expect(v).unwrap().data().iter().map(|f| f.to_bits()).collect();
            assert_eq!(a, c);
        }
    }
}
