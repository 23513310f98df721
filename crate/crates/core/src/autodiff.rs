//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its output value plus whatever the
//! backward rule needs. Nodes are only ever appended, so creation order is a
//! valid topological order and `backward` simply walks the tape in reverse,
//! summing gradient contributions for nodes with several consumers.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use crate::activations::{self, Activation, MixedActivation};
use crate::error::{Error, Result};
use crate::ops::{self, Conv2dGeometry};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Input,
    Param(String),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geometry: Conv2dGeometry,
        cols: Vec<T>,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Reshape {
        input: Var,
    },
    Activation {
        input: Var,
        spec: Activation,
        slopes: Option<Var>,
    },
    Mixture {
        input: Var,
        mix: MixedActivation,
        slopes: Vec<Option<Var>>,
    },
    SoftmaxCrossEntropy {
        probs: Tensor<T>,
        labels: Vec<usize>,
        logits: Var,
    },
    Sum {
        input: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Mul {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    /// Arbitrary elementwise map with its pointwise derivative saved.
    Map {
        input: Var,
        derivative: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::Conv2d { input, weight, bias, .. } | Op::Dense { input, weight, bias } => {
                vec![*input, *weight, *bias]
            }
            Op::MaxPool2d { input, .. }
            | Op::Reshape { input }
            | Op::Sum { input }
            | Op::Scale { input, .. }
            | Op::Map { input, .. } => vec![*input],
            Op::Activation { input, slopes, .. } => std::iter::once(*input).chain(*slopes).collect(),
            Op::Mixture { input, slopes, .. } => {
                std::iter::once(*input).chain(slopes.iter().flatten().copied()).collect()
            }
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::Add { lhs, rhs } | Op::Mul { lhs, rhs } => vec![*lhs, *rhs],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// An append-only record of a forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::shape("tape", format!("variable {} not on this tape", v.0)));
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A constant leaf that receives no gradient (data, labels).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// A named trainable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        self.push(value, Op::Param(name.into()))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        for v in [input, weight, bias] {
            self.check(v)?;
        }
        let (out, geometry, cols) =
            ops::conv2d_forward(self.value(input), self.value(weight), self.value(bias), stride, padding)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
                cols,
            },
        ))
    }

    pub fn max_pool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        self.check(input)?;
        let (out, argmax) = ops::max_pool2d_forward(self.value(input), k, stride)?;
        Ok(self.push(out, Op::MaxPool2d { input, argmax }))
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        for v in [input, weight, bias] {
            self.check(v)?;
        }
        let out = ops::dense_forward(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Dense { input, weight, bias }))
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.check(input)?;
        let out = self.value(input).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { input }))
    }

    /// Collapses every axis after the first: `[N, …] → [N, D]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let shape = self.value(input).shape();
        let n = shape.first().copied().unwrap_or(1);
        let d = shape.iter().skip(1).product::<usize>();
        self.reshape(input, [n, d])
    }

    pub fn activation(&mut self, input: Var, spec: Activation, slopes: Option<Var>) -> Result<Var> {
        self.check(input)?;
        if let Some(s) = slopes {
            self.check(s)?;
        }
        let out = activations::act_forward(&spec, self.value(input), slopes.map(|s| self.value(s)))?;
        Ok(self.push(out, Op::Activation { input, spec, slopes }))
    }

    pub fn mixture(&mut self, input: Var, mix: MixedActivation, slopes: Vec<Option<Var>>) -> Result<Var> {
        self.check(input)?;
        for s in slopes.iter().flatten() {
            self.check(*s)?;
        }
        let slope_values: Vec<_> = slopes.iter().map(|s| s.map(|s| self.value(s))).collect();
        let out = activations::mixture_forward(&mix, self.value(input), &slope_values)?;
        Ok(self.push(out, Op::Mixture { input, mix, slopes }))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let (loss, probs) = ops::softmax_cross_entropy_forward(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                probs,
                labels: labels.to_vec(),
                logits,
            },
        ))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let s = self.value(input).sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { input }))
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.check(lhs)?;
        self.check(rhs)?;
        let out = self.value(lhs).zip_map(self.value(rhs), |a, b| a + b)?;
        Ok(self.push(out, Op::Add { lhs, rhs }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.check(lhs)?;
        self.check(rhs)?;
        let out = self.value(lhs).zip_map(self.value(rhs), |a, b| a * b)?;
        Ok(self.push(out, Op::Mul { lhs, rhs }))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        self.check(input)?;
        let out = self.value(input).map(|v| v * factor);
        Ok(self.push(out, Op::Scale { input, factor }))
    }

    /// Elementwise `f` with user-supplied derivative `df`.
    pub fn map(&mut self, input: Var, f: impl Fn(T) -> T, df: impl Fn(T) -> T) -> Result<Var> {
        self.check(input)?;
        let x = self.value(input);
        let out = x.map(f);
        let derivative = x.map(df);
        Ok(self.push(out, Op::Map { input, derivative }))
    }

    /// Reverse accumulation from a scalar `root`.
    /// Hash of every discrete choice the forward pass made: max-pool winners
    /// and the sign of each activation input. Two evaluations with the same
    /// signature lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::MaxPool2d { argmax, .. } => argmax.hash(&mut h),
                Op::Activation { input, .. } | Op::Mixture { input, .. } => {
                    for &v in self.value(*input).data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        self.check(root)?;
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::full(root_value.shape().to_vec(), T::one()));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let wants = |v: Var| self.nodes[v.0].requires_grad;
            let mut contributions: Vec<(Var, Tensor<T>)> = Vec::new();
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::Conv2d {
                    input,
                    weight,
                    geometry,
                    cols,
                    bias,
                } => {
                    let g = ops::conv2d_backward(geometry, self.value(*weight), cols, &upstream, wants(*input))?;
                    if let Some(dx) = g.input {
                        contributions.push((*input, dx));
                    }
                    contributions.push((*weight, g.weight));
                    contributions.push((*bias, g.bias));
                }
                Op::MaxPool2d { input, argmax } => {
                    let dx = ops::max_pool2d_backward(self.value(*input).shape(), argmax, &upstream)?;
                    contributions.push((*input, dx));
                }
                Op::Dense { input, weight, bias } => {
                    let (dx, dw, db) =
                        ops::dense_backward(self.value(*input), self.value(*weight), &upstream, wants(*input))?;
                    if let Some(dx) = dx {
                        contributions.push((*input, dx));
                    }
                    contributions.push((*weight, dw));
                    contributions.push((*bias, db));
                }
                Op::Reshape { input } => {
                    let shape = self.value(*input).shape().to_vec();
                    contributions.push((*input, upstream.clone().reshape(shape)?));
                }
                Op::Activation { input, spec, slopes } => {
                    let (dx, ds) = activations::act_backward(
                        spec,
                        self.value(*input),
                        &upstream,
                        slopes.map(|s| self.value(s)),
                    )?;
                    contributions.push((*input, dx));
                    if let (Some(s), Some(ds)) = (slopes, ds) {
                        contributions.push((*s, ds));
                    }
                }
                Op::Mixture { input, mix, slopes } => {
                    let slope_values: Vec<_> = slopes.iter().map(|s| s.map(|s| self.value(s))).collect();
                    let (dx, ds) = activations::mixture_backward(mix, self.value(*input), &upstream, &slope_values)?;
                    contributions.push((*input, dx));
                    for (s, d) in slopes.iter().zip(ds) {
                        if let (Some(s), Some(d)) = (s, d) {
                            contributions.push((*s, d));
                        }
                    }
                }
                Op::SoftmaxCrossEntropy { probs, labels, logits } => {
                    let up = upstream.data()[0];
                    contributions.push((*logits, ops::softmax_cross_entropy_backward(probs, labels, up)));
                }
                Op::Sum { input } => {
                    let shape = self.value(*input).shape().to_vec();
                    contributions.push((*input, Tensor::full(shape, upstream.data()[0])));
                }
                Op::Add { lhs, rhs } => {
                    contributions.push((*lhs, upstream.clone()));
                    contributions.push((*rhs, upstream.clone()));
                }
                Op::Mul { lhs, rhs } => {
                    contributions.push((*lhs, upstream.zip_map(self.value(*rhs), |u, r| u * r)?));
                    contributions.push((*rhs, upstream.zip_map(self.value(*lhs), |u, l| u * l)?));
                }
                Op::Scale { input, factor } => {
                    let f = *factor;
                    contributions.push((*input, upstream.map(|v| v * f)));
                }
                Op::Map { input, derivative } => {
                    contributions.push((*input, upstream.zip_map(derivative, |u, d| u * d)?));
                }
            }
            for (v, g) in contributions {
                if !wants(v) {
                    continue;
                }
                match grads[v.0].as_mut() {
                    Some(acc) => acc.add_assign(&g)?,
                    None => grads[v.0] = Some(g),
                }
            }
            grads[i] = Some(upstream);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(root.0 + 1)
            .filter_map(|(i, n)| match &n.op {
                Op::Param(name) => Some((name.clone(), Var(i))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    /// All named parameter leaves recorded so far.
    pub fn params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match &n.op {
            Op::Param(name) => Some((name.as_str(), Var(i))),
            _ => None,
        })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the root w.r.t. `v`, if `v` influenced the root.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| n == name).and_then(|(_, v)| self.get(*v))
    }

    /// Gradient per named parameter. Parameters the root does not depend on
    /// get a zero tensor. A name bound more than once has its gradients summed.
    pub fn into_named(mut self, tape: &Tape<T>) -> Result<BTreeMap<String, Tensor<T>>> {
        let mut out: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for (name, v) in std::mem::take(&mut self.params) {
            let g = self.grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()));
            match out.get_mut(&name) {
                Some(acc) => acc.add_assign(&g)?,
                None => {
                    out.insert(name, g);
                }
            }
        }
        Ok(out)
    }
}
