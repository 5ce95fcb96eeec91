use crate::autograd::ParamStore;
use crate::tensor::{Element, Tensor};

/// SGD with heavy-ball momentum: `v ← μ·v + g; p ← p − lr·v`.
///
/// Velocity buffers persist across steps. Gradients are zeroed after each step.
#[derive(Clone, Debug)]
pub struct SgdMomentum<E> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor<E>>,
}

impl<E: Element> SgdMomentum<E> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        SgdMomentum { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore<E>) {
        if self.velocity.len() != store.params().len() {
            self.velocity = store.params().iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        }
        let lr = E::from_f64(self.lr);
        let mu = E::from_f64(self.momentum);
        for (param, vel) in store.params_mut().iter_mut().zip(&mut self.velocity) {
            for ((p, g), v) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(param.grad.data_mut().iter_mut())
                .zip(vel.data_mut())
            {
                *v = mu * *v + *g;
                *p -= lr * *v;
                *g = E::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add_param("p", Tensor::scalar(value)).unwrap();
        s.param_mut(id).grad = Tensor::scalar(grad);
        s
    }

    #[test]
    fn two_momentum_steps_by_hand() {
        let mut s = store_with(1.0, 0.5);
        let mut opt = SgdMomentum::new(0.1, 0.9);
        opt.step(&mut s);
        assert!((s.params()[0].value.item() - 0.95).abs() < 1e-12);
        assert_eq!(s.params()[0].grad.item(), 0.0);
        s.params_mut()[0].grad = Tensor::scalar(0.5);
        opt.step(&mut s);
        // v = 0.9·0.5 + 0.5 = 0.95
        assert!((s.params()[0].value.item() - 0.855).abs() < 1e-12);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut s = store_with(2.0, 4.0);
        SgdMomentum::new(0.25, 0.0).step(&mut s);
        assert_eq!(s.params()[0].value.item(), 1.0);
    }

    #[test]
    fn zero_gradient_keeps_value() {
        let mut s = store_with(3.0, 0.0);
        let mut opt = SgdMomentum::new(0.5, 0.9);
        for _ in 0..3 {
            opt.step(&mut s);
        }
        assert_eq!(s.params()[0].value.item(), 3.0);
    }
}
