//! Reverse-mode differentiation over a tape recorded during one forward pass.
//!
//! A [`Graph`] borrows its leaf tensors (typically model parameters), so a
//! forward pass copies no weights. Nodes are appended in evaluation order,
//! which makes the tape its own topological sort; [`Graph::backward`] walks
//! it once in reverse. Only first derivatives are supported.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::ops::{self, ConvGeometry, PoolGeometry, PROB_FLOOR};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'a> {
    Owned(Vec<f64>),
    Borrowed(&'a [f64]),
}

impl Value<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(v) => v,
        }
    }
}

enum Op {
    Leaf,
    Conv1d { signal: Var, kernel: Var, padding: usize },
    Conv2d { input: Var, kernels: Var, bias: Var, geo: ConvGeometry, cols: Vec<f64> },
    MaxPool { input: Var, argmax: Vec<usize> },
    Linear { input: Var, weights: Var, bias: Var },
    Relu { input: Var },
    Reshape { input: Var },
    Concat { parts: Vec<Var> },
    Sum { input: Var },
    Mul { lhs: Var, rhs: Var },
    Scale { input: Var, factor: f64 },
    Softmax { input: Var },
    CrossEntropy { probs: Var, class: usize },
    SoftmaxCrossEntropy { scores: Var, class: usize, probs: Vec<f64> },
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Value<'a>,
    op: Op,
    needs_grad: bool,
}

/// A single-use computation tape.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar loss with respect to the leaves of a [`Graph`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `∂loss/∂var` for a leaf that requires gradients; `None` when the leaf
    /// did not participate in the loss.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient for `var` into `tensor.grad`.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor, scale: f64) -> Result<()> {
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g, scale),
            None => Ok(()),
        }
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(delta) {
                *a += d;
            }
        }
        None => *slot = Some(delta),
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Value<'a>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { shape, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a> {
        &self.nodes[v.0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a borrowed tensor as a leaf; it is differentiated when the
    /// tensor has `requires_grad` set.
    pub fn leaf(&mut self, tensor: &'a Tensor) -> Var {
        self.push(
            tensor.shape().to_vec(),
            Value::Borrowed(tensor.data()),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// Records an owned tensor as a leaf.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        let needs = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.push(shape, Value::Owned(tensor.into_data()), Op::Leaf, needs)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.node(v).value.as_slice()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("recorded shapes are valid")
    }

    pub fn conv1d(&mut self, signal: Var, kernel: Var, padding: usize) -> Result<Var> {
        if self.shape(signal).len() != 1 || self.shape(kernel).len() != 1 {
            bail!(Shape, "conv1d expects rank-1 signal and kernel");
        }
        let out = ops::conv1d_raw(self.value(signal), self.value(kernel), padding)?;
        let needs = self.needs(signal) || self.needs(kernel);
        Ok(self.push(
            vec![out.len()],
            Value::Owned(out),
            Op::Conv1d { signal, kernel, padding },
            needs,
        ))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geo = ConvGeometry::new(self.shape(input), self.shape(kernels), stride, padding)?;
        if self.shape(bias) != [geo.filters] {
            bail!(Shape, "bias of shape {:?} for {} filters", self.shape(bias), geo.filters);
        }
        let (out, cols) =
            ops::conv2d_raw(&geo, self.value(input), self.value(kernels), self.value(bias));
        let needs = self.needs(input) || self.needs(kernels) || self.needs(bias);
        Ok(self.push(
            vec![geo.filters, geo.out_h, geo.out_w],
            Value::Owned(out),
            Op::Conv2d { input, kernels, bias, geo, cols },
            needs,
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let geo = PoolGeometry::new(self.shape(input), window, stride)?;
        let (out, argmax) = ops::maxpool_raw(&geo, self.value(input));
        let needs = self.needs(input);
        Ok(self.push(
            vec![geo.channels, geo.out_h, geo.out_w],
            Value::Owned(out),
            Op::MaxPool { input, argmax },
            needs,
        ))
    }

    pub fn linear(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let (m, _) = ops::linear_check(self.shape(input), self.shape(weights), self.shape(bias))?;
        let out = ops::linear_raw(self.value(input), self.value(weights), self.value(bias));
        let needs = self.needs(input) || self.needs(weights) || self.needs(bias);
        Ok(self.push(vec![m], Value::Owned(out), Op::Linear { input, weights, bias }, needs))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = self.shape(input).to_vec();
        let needs = self.needs(input);
        self.push(shape, Value::Owned(out), Op::Relu { input }, needs)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let count: usize = shape.iter().product();
        if count != self.value(input).len() || shape.contains(&0) {
            bail!(Shape, "cannot reshape {:?} to {:?}", self.shape(input), shape);
        }
        let out = self.value(input).to_vec();
        let needs = self.needs(input);
        Ok(self.push(shape.to_vec(), Value::Owned(out), Op::Reshape { input }, needs))
    }

    pub fn flatten(&mut self, input: Var) -> Var {
        let n = self.value(input).len();
        self.reshape(input, &[n]).expect("flatten preserves element count")
    }

    /// Concatenates rank-1 values in order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            bail!(Shape, "concat of zero parts");
        }
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                bail!(Shape, "concat expects rank-1 parts, got {:?}", self.shape(p));
            }
            out.extend_from_slice(self.value(p));
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            vec![out.len()],
            Value::Owned(out),
            Op::Concat { parts: parts.to_vec() },
            needs,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).iter().sum();
        let needs = self.needs(input);
        self.push(vec![1], Value::Owned(vec![s]), Op::Sum { input }, needs)
    }

    /// Elementwise product of equally shaped values.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        if self.shape(lhs) != self.shape(rhs) {
            bail!(Shape, "mul of {:?} and {:?}", self.shape(lhs), self.shape(rhs));
        }
        let out = self.value(lhs).iter().zip(self.value(rhs)).map(|(a, b)| a * b).collect();
        let shape = self.shape(lhs).to_vec();
        let needs = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(shape, Value::Owned(out), Op::Mul { lhs, rhs }, needs))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).iter().map(|v| v * factor).collect();
        let shape = self.shape(input).to_vec();
        let needs = self.needs(input);
        self.push(shape, Value::Owned(out), Op::Scale { input, factor }, needs)
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        if self.shape(input).len() != 1 {
            bail!(Shape, "softmax expects a rank-1 score vector");
        }
        let out = ops::softmax_raw(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(vec![out.len()], Value::Owned(out), Op::Softmax { input }, needs))
    }

    pub fn cross_entropy(&mut self, probs: Var, class: usize) -> Result<Var> {
        if self.shape(probs).len() != 1 {
            bail!(Shape, "cross_entropy expects a rank-1 distribution");
        }
        let loss = ops::cross_entropy_raw(self.value(probs), class)?;
        let needs = self.needs(probs);
        Ok(self.push(vec![1], Value::Owned(vec![loss]), Op::CrossEntropy { probs, class }, needs))
    }

    /// Softmax followed by cross-entropy as one node; its gradient on the
    /// scores is `p − onehot(class)`.
    pub fn softmax_cross_entropy(&mut self, scores: Var, class: usize) -> Result<Var> {
        if self.shape(scores).len() != 1 {
            bail!(Shape, "softmax_cross_entropy expects a rank-1 score vector");
        }
        let probs = ops::softmax_raw(self.value(scores))?;
        let loss = ops::cross_entropy_raw(&probs, class)?;
        let needs = self.needs(scores);
        Ok(self.push(
            vec![1],
            Value::Owned(vec![loss]),
            Op::SoftmaxCrossEntropy { scores, class, probs },
            needs,
        ))
    }

    /// Back-propagates from a single-element `loss`. Gradients are retained
    /// for leaves only.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            bail!(
                Usage,
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            );
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        // keep leaves that asked for gradients
        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if !(matches!(node.op, Op::Leaf) && node.needs_grad) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { signal, kernel, padding } => {
                let (ds, dk) =
                    ops::conv1d_backward(self.value(*signal), self.value(*kernel), *padding, g);
                if self.needs(*signal) {
                    add_into(&mut grads[signal.0], ds);
                }
                if self.needs(*kernel) {
                    add_into(&mut grads[kernel.0], dk);
                }
            }
            Op::Conv2d { input, kernels, bias, geo, cols } => {
                let (di, dk, db) =
                    ops::conv2d_backward(geo, cols, self.value(*kernels), g, self.needs(*input));
                if let Some(di) = di {
                    add_into(&mut grads[input.0], di);
                }
                if self.needs(*kernels) {
                    add_into(&mut grads[kernels.0], dk);
                }
                if self.needs(*bias) {
                    add_into(&mut grads[bias.0], db);
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut di = vec![0.0; self.value(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    di[src] += gv;
                }
                add_into(&mut grads[input.0], di);
            }
            Op::Linear { input, weights, bias } => {
                let (di, dw) = ops::linear_backward(
                    self.value(*input),
                    self.value(*weights),
                    g,
                    self.needs(*input),
                );
                if let Some(di) = di {
                    add_into(&mut grads[input.0], di);
                }
                if self.needs(*weights) {
                    add_into(&mut grads[weights.0], dw);
                }
                if self.needs(*bias) {
                    add_into(&mut grads[bias.0], g.to_vec());
                }
            }
            Op::Relu { input } => {
                let di = self
                    .value(*input)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                add_into(&mut grads[input.0], di);
            }
            Op::Reshape { input } => add_into(&mut grads[input.0], g.to_vec()),
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.needs(p) {
                        add_into(&mut grads[p.0], g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Sum { input } => {
                let n = self.value(*input).len();
                add_into(&mut grads[input.0], vec![g[0]; n]);
            }
            Op::Mul { lhs, rhs } => {
                let (a, b) = (self.value(*lhs), self.value(*rhs));
                if self.needs(*lhs) {
                    add_into(&mut grads[lhs.0], g.iter().zip(b).map(|(gv, bv)| gv * bv).collect());
                }
                if self.needs(*rhs) {
                    add_into(&mut grads[rhs.0], g.iter().zip(a).map(|(gv, av)| gv * av).collect());
                }
            }
            Op::Scale { input, factor } => {
                add_into(&mut grads[input.0], g.iter().map(|gv| gv * factor).collect());
            }
            Op::Softmax { input } => {
                let p = node.value.as_slice();
                let dot: f64 = g.iter().zip(p).map(|(gv, pv)| gv * pv).sum();
                let di = p.iter().zip(g).map(|(pv, gv)| pv * (gv - dot)).collect();
                add_into(&mut grads[input.0], di);
            }
            Op::CrossEntropy { probs, class } => {
                let p = self.value(*probs);
                let mut di = vec![0.0; p.len()];
                // the loss is flat where the probability floor is active
                if p[*class] > PROB_FLOOR {
                    di[*class] = -g[0] / p[*class];
                }
                add_into(&mut grads[probs.0], di);
            }
            Op::SoftmaxCrossEntropy { scores, class, probs } => {
                let mut di: Vec<f64> = probs.iter().map(|p| g[0] * p).collect();
                di[*class] -= g[0];
                add_into(&mut grads[scores.0], di);
            }
        }
    }
}
