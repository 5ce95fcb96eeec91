use serde::{Deserialize, Serialize};

use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn relu<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    input.map(|v| v.max(E::zero()))
}

pub fn sigmoid_scalar<E: Element>(v: E) -> E {
    // split on sign so exp never overflows
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

pub fn sigmoid<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    input.map(sigmoid_scalar)
}

pub fn activation<E: Element>(input: &Tensor<E>, kind: Activation) -> Tensor<E> {
    match kind {
        Activation::Relu => relu(input),
        Activation::Sigmoid => sigmoid(input),
    }
}

pub fn relu_backward<E: Element>(input: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    Tensor::new(
        grad_out.shape().to_vec(),
        input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > E::zero() { g } else { E::zero() })
            .collect(),
    )
    .expect("relu grad shape")
}

/// Uses the forward output: `σ' = σ(1 − σ)`.
pub fn sigmoid_backward<E: Element>(output: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    Tensor::new(
        grad_out.shape().to_vec(),
        output
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&s, &g)| g * s * (E::one() - s))
            .collect(),
    )
    .expect("sigmoid grad shape")
}
