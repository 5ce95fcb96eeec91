//! Reverse-mode differentiation over a linear tape.
//!
//! Forward calls on [`Tape`] run the kernel from [`crate::ops`] immediately and
//! record what the backward pass needs. [`Tape::gradients`] replays the tape in
//! reverse, visiting every recorded primitive exactly once.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::ops::{self, BatchStats, BnCache, Mode};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BufferId(pub usize);

/// Trainable tensor; `grad` always has the shape of `value`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<E> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
}

/// Non-trainable state such as batchnorm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Buffer<E> {
    pub name: String,
    pub value: Tensor<E>,
}

/// Named parameters and buffers of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<E> {
    params: Vec<Parameter<E>>,
    buffers: Vec<Buffer<E>>,
    names: HashMap<String, usize>,
    buffer_names: HashMap<String, usize>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
            buffer_names: HashMap::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) || self.buffer_names.contains_key(&name) {
            return Err(invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.names.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<BufferId> {
        let name = name.into();
        if self.names.contains_key(&name) || self.buffer_names.contains_key(&name) {
            return Err(invalid(format!("duplicate buffer name {name}")));
        }
        let id = self.buffers.len();
        self.buffer_names.insert(name.clone(), id);
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(id))
    }

    pub fn param(&self, id: ParamId) -> &Parameter<E> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<E> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<E> {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<E> {
        &mut self.buffers[id.0].value
    }

    pub fn params(&self) -> &[Parameter<E>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<E>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<E>] {
        &self.buffers
    }

    pub fn param_by_name(&self, name: &str) -> Option<&Parameter<E>> {
        self.names.get(name).map(|&i| &self.params[i])
    }

    pub fn buffer_by_name(&self, name: &str) -> Option<&Buffer<E>> {
        self.buffer_names.get(name).map(|&i| &self.buffers[i])
    }

    /// Replaces the value of a named parameter or buffer, keeping its shape.
    pub fn set_named(&mut self, name: &str, value: Tensor<E>) -> Result<()> {
        let slot = if let Some(&i) = self.names.get(name) {
            &mut self.params[i].value
        } else if let Some(&i) = self.buffer_names.get(name) {
            &mut self.buffers[i].value
        } else {
            return Err(invalid(format!("unknown tensor name {name}")));
        };
        if slot.shape() != value.shape() {
            return Err(shape_err(format!(
                "{name}: stored shape {:?}, replacement {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(E::zero());
        }
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Same names and shapes, values converted to another precision.
    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), value: p.value.cast(), grad: p.grad.cast() })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| Buffer { name: b.name.clone(), value: b.value.cast() })
                .collect(),
            names: self.names.clone(),
            buffer_names: self.buffer_names.clone(),
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<E> {
    Leaf(Option<ParamId>),
    /// Leaf whose gradient is never requested, so producers may skip it.
    Constant,
    Conv2d { input: Var, weight: Var, stride: usize, padding: usize },
    Depthwise { input: Var, weight: Var, stride: usize, padding: usize },
    BatchNorm { input: Var, gamma: Var, beta: Var, cache: BnCache<E> },
    Relu(Var),
    Sigmoid(Var),
    AvgPool { input: Var, window: usize },
    Upsample(Var),
    FcVertical { input: Var, theta: Var },
    FcHorizontal { input: Var, theta: Var },
    Mul(Var, Var),
    Add(Var, Var),
    Scale(Var, E),
    ConcatChannels(Vec<Var>),
    GlobalAvgPool(Var),
    Linear { input: Var, weight: Var, bias: Var },
    WeightedSum { input: Var, weights: Tensor<E> },
    CrossEntropy { logits: Var, probs: Tensor<E>, labels: Vec<usize>, coeffs: Vec<E> },
}

#[derive(Debug)]
struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape<E> {
    nodes: Vec<Node<E>>,
    warnings: Vec<String>,
}

/// Gradients of one scalar with respect to every node on a tape.
pub struct Gradients<E> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, var: Var) -> Option<&Tensor<E>> {
        self.grads[var.0].as_ref()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), warnings: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<E> {
        &self.nodes[var.0].value
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    /// Sign of every ReLU input on the tape, in recording order. Two tapes
    /// with equal patterns lie on the same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(input) => Some(input),
                _ => None,
            })
            .flat_map(|input| self.value(input).data().iter().map(|&v| v > E::zero()))
            .collect()
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input.
    pub fn input(&mut self, value: Tensor<E>) -> Var {
        self.push(value, Op::Leaf(None))
    }

    /// Records an input that needs no gradient, such as an image batch.
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records a snapshot of a parameter; its gradient is routed back to the
    /// store by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore<E>, id: ParamId) -> Var {
        self.push(store.param(id).value.clone(), Op::Leaf(Some(id)))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(weight), stride, padding)?;
        Ok(self.push(out, Op::Conv2d { input, weight, stride, padding }))
    }

    pub fn depthwise_conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::depthwise_conv2d(self.value(input), self.value(weight), stride, padding)?;
        Ok(self.push(out, Op::Depthwise { input, weight, stride, padding }))
    }

    /// Train mode returns the batch statistics; eval mode reads `running`.
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        running: (&[E], &[E]),
        epsilon: f64,
    ) -> Result<(Var, Option<BatchStats<E>>)> {
        let (x, g, b) = (self.value(input), self.value(gamma), self.value(beta));
        let (out, cache, stats) = match mode {
            Mode::Train => {
                let (out, cache, stats) = ops::batchnorm2d_train(x, g, b, epsilon)?;
                (out, cache, Some(stats))
            }
            Mode::Eval => {
                let (out, cache) = ops::batchnorm2d_eval(x, g, b, running.0, running.1, epsilon)?;
                (out, cache, None)
            }
        };
        Ok((self.push(out, Op::BatchNorm { input, gamma, beta, cache }), stats))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        self.push(out, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = ops::sigmoid(self.value(input));
        self.push(out, Op::Sigmoid(input))
    }

    pub fn avgpool2d(&mut self, input: Var, window: usize) -> Result<Var> {
        let out = ops::avgpool2d(self.value(input), window, window)?;
        Ok(self.push(out, Op::AvgPool { input, window }))
    }

    pub fn upsample(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = ops::bilinear_upsample(self.value(input), out_h, out_w)?;
        Ok(self.push(out, Op::Upsample(input)))
    }

    pub fn fc_vertical(&mut self, input: Var, theta: Var) -> Result<Var> {
        let out = ops::fc_vertical(self.value(input), self.value(theta))?;
        Ok(self.push(out, Op::FcVertical { input, theta }))
    }

    pub fn fc_horizontal(&mut self, input: Var, theta: Var) -> Result<Var> {
        let out = ops::fc_horizontal(self.value(input), self.value(theta))?;
        Ok(self.push(out, Op::FcHorizontal { input, theta }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, input: Var, factor: E) -> Var {
        let out = self.value(input).scale(factor);
        self.push(out, Op::Scale(input, factor))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<E>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_channels(&values)?;
        Ok(self.push(out, Op::ConcatChannels(parts.to_vec())))
    }

    pub fn global_avgpool(&mut self, input: Var) -> Result<Var> {
        let out = ops::global_avgpool(self.value(input))?;
        Ok(self.push(out, Op::GlobalAvgPool(input)))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }))
    }

    /// Scalar `Σ input ⊙ weights`.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor<E>) -> Result<Var> {
        let x = self.value(input);
        x.expect_same_shape(&weights)?;
        let total = x.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { input, weights }))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let ones = Tensor::ones(self.value(input).shape().to_vec());
        self.weighted_sum(input, ones)
    }

    /// Sample-weighted softmax cross-entropy over `logits [N, K]`.
    ///
    /// `loss = Σ wᵢ·CEᵢ / D` with `D = Σ wᵢ` when `normalize`, else `D = N`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        sample_weights: &[E],
        normalize: bool,
    ) -> Result<Var> {
        let (loss, probs, coeffs) =
            crate::loss::weighted_cross_entropy_parts(self.value(logits), labels, sample_weights, normalize)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, probs, labels: labels.to_vec(), coeffs },
        ))
    }

    /// Gradients of scalar `loss` with respect to every recorded node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<E>> {
        if !self.value(loss).is_scalar() {
            return Err(invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape().to_vec()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Constant => continue,
                _ => {}
            }
            let is_constant = |v: Var| matches!(self.nodes[v.0].op, Op::Constant);
            let mut acc = |var: Var, t: Tensor<E>| -> Result<()> {
                match &mut grads[var.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => {
                        *slot = Some(t);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf(_) | Op::Constant => unreachable!(),
                Op::Conv2d { input, weight, stride, padding } if is_constant(*input) => {
                    let dw = ops::conv2d_weight_grad(self.value(*input), self.value(*weight), &g, *stride, *padding)?;
                    acc(*weight, dw)?;
                }
                Op::Conv2d { input, weight, stride, padding } => {
                    let (dx, dw) =
                        ops::conv2d_backward(self.value(*input), self.value(*weight), &g, *stride, *padding)?;
                    acc(*input, dx)?;
                    acc(*weight, dw)?;
                }
                Op::Depthwise { input, weight, stride, padding } => {
                    let (dx, dw) = ops::depthwise_conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        &g,
                        *stride,
                        *padding,
                    )?;
                    acc(*input, dx)?;
                    acc(*weight, dw)?;
                }
                Op::BatchNorm { input, gamma, beta, cache } => {
                    let (dx, dg, db) = ops::batchnorm2d_backward(cache, self.value(*gamma), &g)?;
                    acc(*input, dx)?;
                    acc(*gamma, dg)?;
                    acc(*beta, db)?;
                }
                Op::Relu(input) => acc(*input, ops::relu_backward(self.value(*input), &g))?,
                Op::Sigmoid(input) => acc(*input, ops::sigmoid_backward(&node.value, &g))?,
                Op::AvgPool { input, window } => {
                    let dx = ops::avgpool2d_backward(self.value(*input).shape(), &g, *window, *window)?;
                    acc(*input, dx)?;
                }
                Op::Upsample(input) => {
                    acc(*input, ops::bilinear_upsample_backward(self.value(*input).shape(), &g)?)?;
                }
                Op::FcVertical { input, theta } => {
                    let (dx, dt) = ops::fc_vertical_backward(self.value(*input), self.value(*theta), &g)?;
                    acc(*input, dx)?;
                    acc(*theta, dt)?;
                }
                Op::FcHorizontal { input, theta } => {
                    let (dx, dt) = ops::fc_horizontal_backward(self.value(*input), self.value(*theta), &g)?;
                    acc(*input, dx)?;
                    acc(*theta, dt)?;
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                    acc(*a, da)?;
                    acc(*b, db)?;
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone())?;
                    acc(*b, g)?;
                }
                Op::Scale(input, factor) => acc(*input, g.scale(*factor))?,
                Op::ConcatChannels(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let c = self.value(p).shape()[1];
                        acc(p, g.narrow_channels(start, c)?)?;
                        start += c;
                    }
                }
                Op::GlobalAvgPool(input) => {
                    acc(*input, ops::global_avgpool_backward(self.value(*input).shape(), &g)?)?;
                }
                Op::Linear { input, weight, bias } => {
                    let (dx, dw, db) =
                        ops::linear_backward(self.value(*input), self.value(*weight), self.value(*bias), &g)?;
                    acc(*input, dx)?;
                    acc(*weight, dw)?;
                    acc(*bias, db)?;
                }
                Op::WeightedSum { input, weights } => {
                    acc(*input, weights.scale(g.item()))?;
                }
                Op::CrossEntropy { logits, probs, labels, coeffs } => {
                    let k = probs.shape()[1];
                    let upstream = g.item();
                    let mut d = probs.data().to_vec();
                    for (i, row) in d.chunks_mut(k).enumerate() {
                        row[labels[i]] -= E::one();
                        let c = coeffs[i] * upstream;
                        for v in row.iter_mut() {
                            *v *= c;
                        }
                    }
                    acc(*logits, Tensor::new(probs.shape().to_vec(), d)?)?;
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Accumulates (`+=`) the gradient of `loss` into every parameter that
    /// took part in the computation.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<E>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, grad) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Leaf(Some(id)), Some(g)) = (&node.op, grad) {
                let param = store.param_mut(*id);
                param.grad.add_assign(g).map_err(|e| match e {
                    Error::Shape(msg) => shape_err(format!("gradient for {}: {msg}", param.name)),
                    other => other,
                })?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_scaled_param() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add_param("p", Tensor::from_fn([2, 3], |i| i as f64)).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let s = tape.scale(v, 2.0);
        let loss = tape.sum(s).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.param(p).grad.data().iter().all(|&g| g == 2.0));
        // accumulation, not overwrite
        tape.backward(loss, &mut store).unwrap();
        assert!(store.param(p).grad.data().iter().all(|&g| g == 4.0));
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        let grads = tape.gradients(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros([2]));
        assert!(tape.gradients(x).is_err());
    }

    #[test]
    fn reused_value_accumulates() {
        // loss = Σ x·x → 2x
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.gradients(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add_param("a", Tensor::zeros([1])).unwrap();
        assert!(store.add_param("a", Tensor::zeros([1])).is_err());
        assert!(store.add_buffer("a", Tensor::zeros([1])).is_err());
    }
}
